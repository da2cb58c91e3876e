/** DOM wiring: sliders, pose controls, interpolation scrubber and the
 *  inference upload panel, all against the HTTP API. */

import { ApiRequestError, StudioApi } from "./api.js";
import type { ApiInfo, MeshPayload } from "./api.js";
import { MeshViewer } from "./viewer.js";
import { RequestSequencer, debounce } from "./sequencer.js";
import {
  DIAL_JOINTS, StudioState, clampSliders, coefficients, deserializeState,
  initialState, serializeState, sliderBound,
} from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export class StudioApp {
  private state: StudioState;
  private readonly seq = new RequestSequencer();
  private readonly interpCache = new Map<string, MeshPayload[]>();
  private info!: ApiInfo;
  private viewer!: MeshViewer;

  constructor(private readonly api: StudioApi) {
    this.state = initialState(0);
  }

  async start(): Promise<void> {
    this.info = await this.api.info();
    this.state = deserializeState(window.location.hash, this.info.n);
    this.viewer = new MeshViewer(el("viewport"));
    this.buildSliders();
    this.buildPoseControls();
    this.buildInterpolation();
    this.buildInferPanel();
    this.refresh();
  }

  private banner(message: string, errorId = ""): void {
    const host = el("banners");
    const div = document.createElement("div");
    div.className = "banner";
    div.textContent = errorId ? `${message} [${errorId}]` : message;
    const close = document.createElement("button");
    close.textContent = "x";
    close.onclick = () => div.remove();
    div.appendChild(close);
    host.appendChild(div);
  }

  private buildSliders(): void {
    const host = el("sliders");
    host.innerHTML = "";
    this.info.sigma.forEach((sigma, j) => {
      const row = document.createElement("label");
      row.textContent = `dim ${j} (sigma=${sigma.toFixed(3)})`;
      const input = document.createElement("input");
      input.type = "range";
      input.min = String(-sliderBound(this.state));
      input.max = String(sliderBound(this.state));
      input.step = "0.05";
      input.value = String(this.state.sliders[j]);
      input.oninput = () => {
        this.state.sliders[j] = Number.parseFloat(input.value);
        this.onStateChanged();
      };
      row.appendChild(input);
      host.appendChild(row);
    });
    const expert = el<HTMLInputElement>("expert-mode");
    expert.checked = this.state.expertMode;
    expert.onchange = () => {
      this.state.expertMode = expert.checked;
      this.state = clampSliders(this.state);
      this.buildSliders();
      this.onStateChanged();
    };
  }

  private buildPoseControls(): void {
    const select = el<HTMLSelectElement>("pose-preset");
    select.innerHTML = "";
    this.info.pose_presets.forEach((preset, i) => {
      const opt = document.createElement("option");
      opt.value = String(i);
      opt.textContent = preset.name;
      select.appendChild(opt);
    });
    select.value = String(this.state.posePreset);
    select.onchange = () => {
      this.state.posePreset = Number.parseInt(select.value, 10);
      this.onStateChanged();
    };
    const dials = el("dials");
    dials.innerHTML = "";
    DIAL_JOINTS.forEach((name, i) => {
      const row = document.createElement("label");
      row.textContent = name;
      const input = document.createElement("input");
      input.type = "range";
      input.min = "-1.2";
      input.max = "1.2";
      input.step = "0.05";
      input.value = String(this.state.dials[i]);
      input.oninput = () => {
        this.state.dials[i] = Number.parseFloat(input.value);
        this.onStateChanged();
      };
      row.appendChild(input);
      dials.appendChild(row);
    });
  }

  private buildInterpolation(): void {
    el<HTMLButtonElement>("set-a").onclick = () => {
      this.state.interpA = [...coefficients(this.state, this.info.sigma)];
    };
    el<HTMLButtonElement>("set-b").onclick = () => {
      this.state.interpB = [...coefficients(this.state, this.info.sigma)];
    };
    const scrub = el<HTMLInputElement>("interp-t");
    scrub.oninput = async () => {
      this.state.interpT = Number.parseFloat(scrub.value);
      await this.showInterpolated();
    };
  }

  private async showInterpolated(): Promise<void> {
    const { interpA: a, interpB: b } = this.state;
    if (!a || !b) return;
    const key = JSON.stringify([a, b]);
    let frames = this.interpCache.get(key);
    if (!frames) {
      try {
        frames = await this.api.interpolate(a, b, 11);
      } catch (e) {
        this.reportError(e);
        return;
      }
      this.interpCache.set(key, frames);
    }
    const idx = Math.min(10, Math.round(this.state.interpT * 10));
    this.viewer.showGarment(frames[idx]);
    el("mask-texels").textContent = String(frames[idx].mask_texels ?? "");
  }

  private buildInferPanel(): void {
    el<HTMLButtonElement>("infer-run").onclick = async () => {
      const garment = el<HTMLInputElement>("infer-garment").files?.[0];
      const human = el<HTMLInputElement>("infer-human").files?.[0];
      if (!garment || !human) {
        this.banner("select both a garment and a human OBJ first");
        return;
      }
      try {
        const result = await this.api.infer(await fileToBase64(garment), await fileToBase64(human));
        this.state.inferred = result.s;
        this.state.sliders = result.s.map((v, j) => v / this.info.sigma[j]);
        this.state = clampSliders(this.state);
        if (result.residual_flag) {
          this.banner("inference residual unusually high; check units/alignment");
        }
        this.buildSliders();
        this.onStateChanged();
      } catch (e) {
        this.reportError(e);
      }
    };
  }

  private reportError(e: unknown): void {
    if (e instanceof ApiRequestError) this.banner(e.message, e.errorId);
    else this.banner(String(e));
  }

  private onStateChanged = (): void => {
    window.location.hash = serializeState(this.state);
    this.refreshDebounced();
  };

  private refreshDebounced = debounce(() => void this.refresh(), 150);

  private theta(): number[] {
    const preset = this.info.pose_presets[this.state.posePreset];
    const theta = preset.theta.map((row) => [...row]);
    DIAL_JOINTS.forEach((name, i) => {
      const j = this.info.joint_names.indexOf(name);
      if (j >= 0) theta[j][2] += this.state.dials[i];
    });
    return theta.flat();
  }

  async refresh(): Promise<void> {
    const seq = this.seq.issue();
    const s = coefficients(this.state, this.info.sigma);
    const beta = new Array<number>(this.info.n_joints * 2).fill(1);
    try {
      const posed = this.state.posePreset !== 0 || this.state.dials.some((d) => d !== 0);
      const { body } = posed
        ? await this.api.animate(s, this.theta(), beta)
        : await this.api.decode(s);
      if (!this.seq.accept(seq)) return; // superseded by a newer state
      this.viewer.showGarment(body);
      el("mask-texels").textContent = String(body.mask_texels ?? "");
    } catch (e) {
      if (this.seq.accept(seq)) this.reportError(e);
    }
  }
}

async function fileToBase64(file: File): Promise<string> {
  const bytes = new Uint8Array(await file.arrayBuffer());
  let binary = "";
  for (const b of bytes) binary += String.fromCharCode(b);
  return btoa(binary);
}

export async function main(): Promise<void> {
  const api = new StudioApi("");
  const app = new StudioApp(api);
  try {
    await app.start();
  } catch (e) {
    document.body.textContent = `failed to reach /api/info: ${String(e)}`;
  }
}
