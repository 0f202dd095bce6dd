// DOM layer: draws the slice on a canvas, renders signed guidance bars,
// the pose readout, and wires inputs to the controller.

import { SessionController, keyToDelta } from "./controller.js";
import { Pose, decodePixels } from "./protocol.js";

const AXES = ["x", "y", "z", "rx", "ry", "rz"];
const BAR_SCALE = 30; // value that fills a bar completely (mm or deg)

export class ConsoleView {
  private canvas: HTMLCanvasElement;
  private arrow: HTMLCanvasElement;

  constructor(private root: HTMLElement, private ctrl: SessionController) {
    this.root.innerHTML = this.template();
    this.canvas = root.querySelector("#slice") as HTMLCanvasElement;
    this.arrow = root.querySelector("#arrow") as HTMLCanvasElement;
    this.bind();
    ctrl.onChange(() => this.render());
  }

  private template(): string {
    return `
      <div id="banner" class="banner hidden"></div>
      <div class="columns">
        <div>
          <canvas id="slice" width="256" height="256"></canvas>
          <canvas id="arrow" width="256" height="64"></canvas>
          <div class="pose" id="pose"></div>
        </div>
        <div class="panel">
          <form id="session-form">
            <label>subject <input id="subject" type="number" value="3"></label>
            <label>plane
              <select id="plane">
                <option value="0">long-axis</option>
                <option value="1">short-axis-upper</option>
                <option value="2">short-axis-lower</option>
              </select>
            </label>
            <label>start seed <input id="start-seed" type="number" value="1"></label>
            <button type="submit">new session</button>
            <button type="button" id="reset">reset</button>
          </form>
          <div class="steps">
            <label>step mm <input id="step-mm" type="number" value="2" step="0.5"></label>
            <label>step deg <input id="step-deg" type="number" value="2" step="0.5"></label>
            <label><input type="checkbox" id="show-gt"> show ground truth</label>
          </div>
          <div class="keys">keys: a/d = x, w/s = y, q/e = z, j/l = rx, i/k = ry, u/o = rz</div>
          <div id="guidance"></div>
          <div class="follow">
            <select id="follow-model"></select>
            <label>gain <input id="gain" type="number" value="1.0" step="0.1"></label>
            <button id="follow">follow guidance</button>
          </div>
          <div id="remaining" class="hidden"></div>
        </div>
      </div>`;
  }

  private bind(): void {
    const form = this.root.querySelector("#session-form") as HTMLFormElement;
    form.addEventListener("submit", (ev) => {
      ev.preventDefault();
      const subject = Number((this.root.querySelector("#subject") as HTMLInputElement).value);
      const plane = Number((this.root.querySelector("#plane") as HTMLSelectElement).value);
      const startSeed = Number((this.root.querySelector("#start-seed") as HTMLInputElement).value);
      void this.ctrl.newSession(subject, plane, ["baseline", "dreamer"], startSeed);
    });
    (this.root.querySelector("#reset") as HTMLButtonElement).addEventListener("click", () => {
      void this.ctrl.reset();
    });
    (this.root.querySelector("#show-gt") as HTMLInputElement).addEventListener("change", () => {
      this.ctrl.toggleGroundTruth();
    });
    for (const id of ["step-mm", "step-deg"]) {
      (this.root.querySelector(`#${id}`) as HTMLInputElement).addEventListener("change", () => {
        const mm = Number((this.root.querySelector("#step-mm") as HTMLInputElement).value);
        const deg = Number((this.root.querySelector("#step-deg") as HTMLInputElement).value);
        this.ctrl.setStepSizes(mm, deg);
      });
    }
    (this.root.querySelector("#follow") as HTMLButtonElement).addEventListener("click", () => {
      const model = (this.root.querySelector("#follow-model") as HTMLSelectElement).value;
      const gain = Number((this.root.querySelector("#gain") as HTMLInputElement).value);
      void this.ctrl.followGuidance(model, gain);
    });
    window.addEventListener("keydown", (ev) => {
      if ((ev.target as HTMLElement)?.tagName === "INPUT") return;
      if (keyToDelta(ev.key, this.ctrl.state.stepSizes)) {
        ev.preventDefault();
        void this.ctrl.handleKey(ev.key);
      }
    });
  }

  render(): void {
    const st = this.ctrl.state;
    const banner = this.root.querySelector("#banner") as HTMLElement;
    banner.classList.toggle("hidden", !st.banner);
    banner.textContent = st.banner ?? "";

    const last = st.lastState;
    if (!last) return;
    this.drawFrame(last.frame.h, last.frame.w, decodePixels(last.frame));
    this.drawPose(last.pose);
    this.drawGuidance(last.guidance);
    this.drawArrow(last.guidance);
    const rem = this.root.querySelector("#remaining") as HTMLElement;
    rem.classList.toggle("hidden", !st.showGroundTruth);
    if (st.showGroundTruth) {
      rem.innerHTML = "<h4>remaining (truth)</h4>" + this.bars(last.remaining, "truth");
    }
  }

  private drawFrame(h: number, w: number, pixels: Uint8Array): void {
    const ctx = this.canvas.getContext("2d")!;
    const img = ctx.createImageData(w, h);
    for (let i = 0; i < h * w; i++) {
      const v = pixels[i];
      img.data[4 * i] = v;
      img.data[4 * i + 1] = v;
      img.data[4 * i + 2] = v;
      img.data[4 * i + 3] = 255;
    }
    const off = new OffscreenCanvas(w, h);
    off.getContext("2d")!.putImageData(img, 0, 0);
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(off, 0, 0, this.canvas.width, this.canvas.height);
  }

  private drawPose(pose: Pose): void {
    const el = this.root.querySelector("#pose") as HTMLElement;
    el.textContent = pose
      .map((v, i) => `${AXES[i]} ${v.toFixed(2)}${i < 3 ? "mm" : "°"}`)
      .join("  ");
  }

  private bars(values: Pose, cls: string): string {
    return values
      .map((v, i) => {
        const frac = Math.max(-1, Math.min(1, v / BAR_SCALE));
        const side = frac >= 0 ? "pos" : "neg";
        const width = Math.abs(frac) * 50;
        return `<div class="bar-row"><span class="axis">${AXES[i]}</span>
          <div class="bar ${cls}"><div class="fill ${side}" style="width:${width}%;
          ${frac >= 0 ? "left:50%" : "right:50%"}"></div></div>
          <span class="val">${v.toFixed(2)}</span></div>`;
      })
      .join("");
  }

  private drawGuidance(guidance: Record<string, Pose>): void {
    const el = this.root.querySelector("#guidance") as HTMLElement;
    el.innerHTML = Object.entries(guidance)
      .map(([model, vec]) => `<h4>${model}</h4>` + this.bars(vec, model))
      .join("");
    const select = this.root.querySelector("#follow-model") as HTMLSelectElement;
    const models = Object.keys(guidance);
    if (select.options.length !== models.length) {
      select.innerHTML = models.map((m) => `<option value="${m}">${m}</option>`).join("");
    }
  }

  private drawArrow(guidance: Record<string, Pose>): void {
    const ctx = this.arrow.getContext("2d")!;
    ctx.clearRect(0, 0, this.arrow.width, this.arrow.height);
    const first = Object.values(guidance)[0];
    if (!first) return;
    const cx = this.arrow.width / 2;
    const cy = this.arrow.height / 2;
    const scale = 2.0;
    ctx.beginPath();
    ctx.moveTo(cx, cy);
    ctx.lineTo(cx + first[0] * scale, cy + first[1] * scale);
    ctx.strokeStyle = "#4da3ff";
    ctx.lineWidth = 3;
    ctx.stroke();
    ctx.beginPath();
    ctx.arc(cx, cy, 3, 0, 2 * Math.PI);
    ctx.fillStyle = "#888";
    ctx.fill();
  }
}
