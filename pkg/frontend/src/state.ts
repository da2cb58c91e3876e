/** Studio state: shape sliders in sigma units, pose controls, interpolation
 *  endpoints/scrub and the last inference result. Serializable to the URL
 *  hash so sessions are shareable. */

export interface StudioState {
  /** slider values in sigma units (value * sigma_j = coefficient) */
  sliders: number[];
  expertMode: boolean; // widens slider bounds from +-1 to +-3 sigma
  posePreset: number; // index into the preset list
  /** manual axis-angle dials for the 4 most expressive joints, radians */
  dials: number[];
  interpA: number[] | null;
  interpB: number[] | null;
  interpT: number; // scrub position in [0, 1]
  inferred: number[] | null;
}

export const DIAL_JOINTS = ["upper_arm_l", "upper_arm_r", "upper_leg_l", "upper_leg_r"];

export function initialState(nDims: number): StudioState {
  return {
    sliders: new Array<number>(nDims).fill(0),
    expertMode: false,
    posePreset: 0,
    dials: [0, 0, 0, 0],
    interpA: null,
    interpB: null,
    interpT: 0,
    inferred: null,
  };
}

export function sliderBound(state: StudioState): number {
  return state.expertMode ? 3.0 : 1.0;
}

export function clampSliders(state: StudioState): StudioState {
  const b = sliderBound(state);
  return { ...state, sliders: state.sliders.map((v) => Math.min(b, Math.max(-b, v))) };
}

/** Coefficients sent to the API: sigma units scaled by the per-dim sigma. */
export function coefficients(state: StudioState, sigma: number[]): number[] {
  return state.sliders.map((v, j) => v * sigma[j]);
}

export function serializeState(state: StudioState): string {
  const fields = [
    `s=${state.sliders.map((v) => v.toFixed(4)).join(",")}`,
    `x=${state.expertMode ? 1 : 0}`,
    `p=${state.posePreset}`,
    `d=${state.dials.map((v) => v.toFixed(3)).join(",")}`,
    `t=${state.interpT.toFixed(3)}`,
  ];
  if (state.interpA) fields.push(`a=${state.interpA.map((v) => v.toFixed(4)).join(",")}`);
  if (state.interpB) fields.push(`b=${state.interpB.map((v) => v.toFixed(4)).join(",")}`);
  return fields.join("&");
}

function parseFloats(text: string): number[] {
  return text.split(",").map((t) => Number.parseFloat(t));
}

export function deserializeState(hash: string, nDims: number): StudioState {
  const state = initialState(nDims);
  for (const field of hash.replace(/^#/, "").split("&")) {
    const [key, value] = field.split("=");
    if (!value) continue;
    if (key === "s") {
      const vals = parseFloats(value);
      if (vals.length === nDims && vals.every(Number.isFinite)) state.sliders = vals;
    } else if (key === "x") state.expertMode = value === "1";
    else if (key === "p") state.posePreset = Number.parseInt(value, 10) || 0;
    else if (key === "d") {
      const vals = parseFloats(value);
      if (vals.length === 4 && vals.every(Number.isFinite)) state.dials = vals;
    } else if (key === "t") state.interpT = Number.parseFloat(value) || 0;
    else if (key === "a") state.interpA = parseFloats(value);
    else if (key === "b") state.interpB = parseFloats(value);
  }
  return clampSliders(state);
}
