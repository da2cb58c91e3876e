/** Newest-wins request sequencing: responses carry the sequence number of
 *  the state that issued them, and anything but the latest is discarded, so
 *  the viewport can never show a superseded state. */

export class RequestSequencer {
  private issued = 0;
  private rendered = 0;

  issue(): number {
    this.issued += 1;
    return this.issued;
  }

  get latest(): number {
    return this.issued;
  }

  /** True when a response for `seq` should render (it is the newest issued
   *  and nothing newer has rendered). */
  accept(seq: number): boolean {
    if (seq !== this.issued || seq < this.rendered) return false;
    this.rendered = seq;
    return true;
  }
}

/** Trailing-edge debounce; the default 150 ms matches slider feel. */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  waitMs = 150,
  timers: { set: typeof setTimeout; clear: typeof clearTimeout } = {
    set: setTimeout,
    clear: clearTimeout,
  },
): (...args: A) => void {
  let handle: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (handle !== null) timers.clear(handle);
    handle = timers.set(() => {
      handle = null;
      fn(...args);
    }, waitMs);
  };
}
