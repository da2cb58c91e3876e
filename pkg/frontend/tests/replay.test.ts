import { describe, expect, it } from "vitest";

import { StudioApi } from "../src/api.js";
import { RecordedSession, replaySession } from "../src/session.js";
import { makeMockFetch } from "./mockapi.js";

const LIVE_URL = process.env.UI_API_URL;

function recordedSession(sigma: number[]): RecordedSession {
  const steps = [];
  for (const u of [-1, -0.5, 0, 0.3, 0.7, 1]) {
    steps.push({ s: sigma.map((sg, j) => (j === 0 ? u * sg : 0)) });
  }
  steps.push({ s: sigma.map((sg) => 0.4 * sg) });
  return { steps };
}

describe("session replay determinism", () => {
  it("replaying a recorded slider session yields identical mesh hashes (mock)", async () => {
    const api = new StudioApi("", makeMockFetch());
    const info = await api.info();
    const session = recordedSession(info.sigma);
    const first = await replaySession(api, session);
    const second = await replaySession(api, session);
    expect(first).toHaveLength(session.steps.length);
    expect(second).toEqual(first);
  });

  it.runIf(!!LIVE_URL)(
    "replaying against the live API yields identical mesh hashes",
    async () => {
      const api = new StudioApi(LIVE_URL!);
      const info = await api.info();
      const session = recordedSession(info.sigma);
      const first = await replaySession(api, session);
      const second = await replaySession(api, session);
      expect(second).toEqual(first);
    },
    30000,
  );
});
