import { describe, expect, it } from "vitest";

import { StudioApi } from "../src/api.js";
import { hashMesh } from "../src/meshhash.js";
import { RequestSequencer, debounce } from "../src/sequencer.js";
import { makeMockFetch } from "./mockapi.js";

describe("RequestSequencer", () => {
  it("accepts only the newest issued request", () => {
    const seq = new RequestSequencer();
    const first = seq.issue();
    const second = seq.issue();
    expect(seq.accept(second)).toBe(true);
    expect(seq.accept(first)).toBe(false);
  });

  it("never renders a superseded decode even when it resolves last", async () => {
    // the first request is artificially slow; the second is fast
    let calls = 0;
    const api = new StudioApi(
      "",
      makeMockFetch({
        delayFor: (url) => {
          if (!url.endsWith("/api/decode")) return 0;
          calls += 1;
          return calls === 1 ? 60 : 0;
        },
      }),
    );
    const seq = new RequestSequencer();
    let rendered: string | null = null;
    const renderedHistory: string[] = [];

    const request = async (s: number[]) => {
      const ticket = seq.issue();
      const { body } = await api.decode(s);
      if (seq.accept(ticket)) {
        rendered = hashMesh(body);
        renderedHistory.push(rendered);
      }
    };

    const slow = request([1, 0, 0]); // stale: superseded before it resolves
    const fast = request([-1, 0, 0]);
    await Promise.all([slow, fast]);

    const { body: wantBody } = await api.decode([-1, 0, 0]);
    expect(rendered).toBe(hashMesh(wantBody));
    expect(renderedHistory).toHaveLength(1); // the stale response never rendered
  });

  it("debounce fires once, trailing edge", async () => {
    let count = 0;
    const bump = debounce(() => (count += 1), 10);
    bump();
    bump();
    bump();
    expect(count).toBe(0);
    await new Promise((r) => setTimeout(r, 30));
    expect(count).toBe(1);
  });
});
