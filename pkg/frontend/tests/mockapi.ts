/** Deterministic in-process stand-in for the shape-space API, implementing
 *  exactly the documented endpoints and status codes. */

import type { FetchLike } from "../src/api.js";
import { hashString } from "../src/meshhash.js";

export interface MockOptions {
  nDims?: number;
  sigma?: number[];
  nJoints?: number;
  /** per-endpoint artificial delay in ms (for stale-response tests) */
  delayFor?: (url: string, body: unknown) => number;
}

const sleep = (ms: number) => new Promise((r) => setTimeout(r, ms));

/** Mesh derived deterministically from the coefficients. */
function meshFor(s: number[], posed = false) {
  const n = 8;
  const vertices: number[][] = [];
  const faces: number[][] = [];
  const spread = 0.2 + 0.1 * (s[0] ?? 0) + (posed ? 0.01 : 0);
  for (let i = 0; i < n; i++) {
    for (let j = 0; j < n; j++) {
      vertices.push([
        (i / (n - 1) - 0.5) * spread,
        -0.1 * j - 0.02 * (s[1] ?? 0),
        0.05 * Math.sin(i + j + (s[2] ?? 0)),
      ]);
    }
  }
  for (let i = 0; i < n - 1; i++) {
    for (let j = 0; j < n - 1; j++) {
      const a = i * n + j;
      faces.push([a, a + 1, a + n + 1]);
      faces.push([a, a + n + 1, a + n]);
    }
  }
  const mask_texels = Math.max(1, Math.round(100 + 40 * (s[0] ?? 0)));
  return { vertices, faces, mask_texels };
}

export function makeMockFetch(options: MockOptions = {}): FetchLike {
  const nDims = options.nDims ?? 3;
  const sigma = options.sigma ?? [1.2, 0.3, 0.1].slice(0, nDims);
  const nJoints = options.nJoints ?? 10;
  const jointNames = ["torso", "head", "upper_arm_l", "lower_arm_l", "upper_arm_r",
    "lower_arm_r", "upper_leg_l", "lower_leg_l", "upper_leg_r", "lower_leg_r"];

  const respond = (payload: unknown, status = 200): Response => {
    const text = JSON.stringify(payload);
    return new Response(text, {
      status,
      headers: { "Content-Type": "application/json", "X-Content-Hash": hashString(text) },
    });
  };
  const fail = (status: number, message: string): Response =>
    respond({ error: message, error_id: hashString(message).slice(0, 8) }, status);

  const checkS = (s: unknown): number[] | Response => {
    if (!Array.isArray(s) || s.length !== nDims || !s.every((v) => Number.isFinite(v))) {
      return fail(400, `s must have ${nDims} entries`);
    }
    for (let j = 0; j < nDims; j++) {
      if (Math.abs(s[j] as number) > 3 * sigma[j] + 1e-12) {
        return fail(400, `s[${j}] exceeds 3 sigma`);
      }
    }
    return s as number[];
  };

  return async (url: string, init?: RequestInit): Promise<Response> => {
    let body: unknown = undefined;
    if (init?.body) {
      try {
        body = JSON.parse(init.body as string);
      } catch {
        return fail(400, "malformed JSON body");
      }
    }
    const delay = options.delayFor?.(url, body) ?? 0;
    if (delay > 0) await sleep(delay);

    if (url.endsWith("/api/info")) {
      return respond({
        category: "case2",
        N: 32,
        n: nDims,
        sigma,
        pose_presets: Array.from({ length: 12 }, (_, i) => ({
          name: `preset_${i}`,
          theta: Array.from({ length: nJoints }, () => [0, 0, 0]),
        })),
        joint_names: jointNames.slice(0, nJoints),
        n_joints: nJoints,
        resolution: 32,
      });
    }
    if (url.endsWith("/api/decode")) {
      const s = checkS((body as { s?: unknown })?.s);
      if (s instanceof Response) return s;
      return respond(meshFor(s));
    }
    if (url.endsWith("/api/animate")) {
      const payload = body as { s?: unknown; theta?: unknown; beta?: unknown };
      const s = checkS(payload?.s);
      if (s instanceof Response) return s;
      const theta = payload.theta;
      const beta = payload.beta;
      if (!Array.isArray(theta) || theta.length !== nJoints * 3) {
        return fail(400, `theta needs ${nJoints * 3} values`);
      }
      if (!Array.isArray(beta) || beta.length !== nJoints * 2) {
        return fail(400, `beta needs ${nJoints * 2} values`);
      }
      return respond({ ...meshFor(s, true), collision_violations: 0 });
    }
    if (url.endsWith("/api/interpolate")) {
      const payload = body as { a?: unknown; b?: unknown; steps?: unknown };
      const a = checkS(payload?.a);
      if (a instanceof Response) return a;
      const b = checkS(payload?.b);
      if (b instanceof Response) return b;
      const steps = payload.steps;
      if (typeof steps !== "number" || !Number.isInteger(steps) || steps < 2 || steps > 25) {
        return fail(400, "steps must be an integer in [2, 25]");
      }
      const meshes = [];
      for (let i = 0; i < steps; i++) {
        const t = i / (steps - 1);
        meshes.push(meshFor(a.map((v, j) => (1 - t) * v + t * b[j])));
      }
      return respond({ meshes });
    }
    if (url.endsWith("/api/infer")) {
      const payload = body as { garment_obj?: unknown; human_obj?: unknown };
      for (const key of ["garment_obj", "human_obj"] as const) {
        const value = payload?.[key];
        if (typeof value !== "string" || /[^A-Za-z0-9+/=]/.test(value)) {
          return fail(400, `${key} is not valid base64`);
        }
      }
      const seedText = (payload.garment_obj as string).slice(0, 64);
      const h = parseInt(hashString(seedText).slice(0, 6), 16) / 0xffffff;
      return respond({
        s: sigma.map((sg, j) => (j === 0 ? (h - 0.5) * sg : 0)),
        residual: 0.01,
        residual_flag: false,
      });
    }
    return fail(404, `no such endpoint: ${url}`);
  };
}
