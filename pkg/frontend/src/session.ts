/** Recorded slider sessions and their deterministic replay. */

import type { StudioApi } from "./api.js";
import { hashMesh } from "./meshhash.js";

export interface SessionStep {
  /** coefficient vector sent to /api/decode */
  s: number[];
}

export interface RecordedSession {
  steps: SessionStep[];
}

/** Replay every step against the API and return one mesh hash per step. */
export async function replaySession(api: StudioApi, session: RecordedSession): Promise<string[]> {
  const hashes: string[] = [];
  for (const step of session.steps) {
    const { body } = await api.decode(step.s);
    hashes.push(hashMesh(body));
  }
  return hashes;
}
