/** DOM layer: builds the panels, binds them to the controller, and
 * renders frames/toasts/progress.  All numeric behavior lives in the
 * controller; this file only translates DOM events. */

import { EditorController } from "./controller.js";
import { RENDER_MODES, type InvertJob, type Rgb, type SceneSummary, type TaggedFrame } from "./types.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  node.append(...children);
  return node;
}

function rgbToHex([r, g, b]: Rgb): string {
  const h = (v: number) => Math.round(Math.min(1, Math.max(0, v)) * 255).toString(16).padStart(2, "0");
  return `#${h(r)}${h(g)}${h(b)}`;
}

function hexToRgb(hex: string): Rgb {
  const n = parseInt(hex.slice(1), 16);
  return [((n >> 16) & 255) / 255, ((n >> 8) & 255) / 255, (n & 255) / 255];
}

export class EditorView {
  private viewport: HTMLImageElement;
  private revisionBadge: HTMLSpanElement;
  private scenePanel: HTMLDivElement;
  private lightPanel: HTMLDivElement;
  private toastBox: HTMLDivElement;
  private jobBar: HTMLProgressElement;
  private jobLabel: HTMLSpanElement;
  private controls: (HTMLInputElement | HTMLSelectElement | HTMLButtonElement)[] = [];
  private frameUrl: string | null = null;

  constructor(
    private root: HTMLElement,
    private controller: EditorController,
  ) {
    this.viewport = el("img", { id: "viewport", draggable: "false", alt: "rendered scene" });
    this.revisionBadge = el("span", { id: "revision" }, "rev –");
    this.scenePanel = el("div", { id: "scenes" });
    this.lightPanel = el("div", { id: "light" });
    this.toastBox = el("div", { id: "toasts" });
    this.jobBar = el("progress", { id: "job-progress", max: "1", value: "0", hidden: "" });
    this.jobLabel = el("span", { id: "job-label" });
    this.build();
  }

  private build(): void {
    const modeSelect = el("select", { id: "mode" });
    for (const mode of RENDER_MODES) modeSelect.append(el("option", { value: mode }, mode));
    modeSelect.addEventListener("change", () => this.controller.setMode(modeSelect.value as never));

    const saveButton = el("button", { id: "save" }, "Save PNG");
    saveButton.addEventListener("click", () => this.saveFrame());

    const uploadInput = el("input", { id: "reference", type: "file", accept: "image/png" });
    uploadInput.addEventListener("change", () => {
      const file = uploadInput.files?.[0];
      if (file) void this.controller.startInvert(file);
      uploadInput.value = "";
    });

    this.controls.push(modeSelect, saveButton, uploadInput);
    this.bindViewportDrag();

    this.root.append(
      el("div", { id: "viewport-pane" }, this.viewport, this.revisionBadge),
      el(
        "div",
        { id: "side-pane" },
        el("h2", {}, "Scenes"),
        this.scenePanel,
        el("h2", {}, "Light"),
        this.lightPanel,
        el("h2", {}, "Render mode"),
        modeSelect,
        el("h2", {}, "Inverse fit"),
        uploadInput,
        this.jobBar,
        this.jobLabel,
        saveButton,
      ),
      this.toastBox,
    );
    this.setEnabled(false);
  }

  private bindViewportDrag(): void {
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    this.viewport.addEventListener("pointerdown", (ev) => {
      dragging = true;
      lastX = ev.clientX;
      lastY = ev.clientY;
      this.viewport.setPointerCapture(ev.pointerId);
    });
    this.viewport.addEventListener("pointermove", (ev) => {
      if (!dragging) return;
      const scale = 0.01;
      this.controller.orbitBy((ev.clientY - lastY) * scale, (ev.clientX - lastX) * scale);
      lastX = ev.clientX;
      lastY = ev.clientY;
    });
    this.viewport.addEventListener("pointerup", () => (dragging = false));
    this.viewport.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.controller.zoomBy(ev.deltaY > 0 ? 1.1 : 1 / 1.1);
    });
  }

  onScene(summary: SceneSummary): void {
    this.setEnabled(true);
    this.scenePanel.replaceChildren();
    for (const entry of summary.scenes) {
      const picker = el("input", { type: "color", value: rgbToHex(entry.palette) });
      picker.addEventListener("input", () =>
        this.controller.setPalette(entry.index, hexToRgb(picker.value)),
      );
      const slider = el("input", {
        type: "range",
        min: "0",
        max: "1",
        step: "0.01",
        value: String(entry.opacity_scale),
      });
      slider.addEventListener("input", () =>
        this.controller.setOpacity(entry.index, Number(slider.value)),
      );
      this.controls.push(picker, slider);
      this.scenePanel.append(
        el(
          "div",
          { class: "scene-row" },
          el("label", {}, `scene ${entry.index} (${entry.count})`),
          picker,
          slider,
        ),
      );
    }
    this.buildLightPanel(summary);
  }

  private buildLightPanel(summary: SceneSummary): void {
    this.lightPanel.replaceChildren();
    const light = summary.light;
    const modeToggle = el("select", { id: "light-mode" });
    modeToggle.append(el("option", { value: "headlight" }, "headlight"));
    modeToggle.append(el("option", { value: "orbital" }, "orbital"));
    modeToggle.value = light.mode;

    const polar = el("input", {
      type: "range", min: String(-Math.PI / 2), max: String(Math.PI / 2),
      step: "0.01", value: String(light.polar),
    });
    const azimuth = el("input", {
      type: "range", min: "0", max: String(2 * Math.PI),
      step: "0.01", value: String(light.azimuth),
    });
    const pushLight = () =>
      this.controller.setLight({
        mode: modeToggle.value as "headlight" | "orbital",
        polar: Number(polar.value),
        azimuth: Number(azimuth.value),
      });
    modeToggle.addEventListener("change", pushLight);
    polar.addEventListener("input", pushLight);
    azimuth.addEventListener("input", pushLight);

    const termLabels = ["ambient", "diffuse", "specular", "shininess"];
    const termSliders = light.term_scales.map((v) =>
      el("input", { type: "range", min: "0.01", max: "3", step: "0.01", value: String(v) }),
    );
    const pushTerms = () =>
      this.controller.setTermScales(
        termSliders.map((s) => Number(s.value)) as [number, number, number, number],
      );
    const rows: HTMLElement[] = [];
    termSliders.forEach((slider, i) => {
      slider.addEventListener("input", pushTerms);
      rows.push(el("div", { class: "term-row" }, el("label", {}, termLabels[i] ?? ""), slider));
    });

    this.controls.push(modeToggle, polar, azimuth, ...termSliders);
    this.lightPanel.append(
      el("div", { class: "light-row" }, el("label", {}, "mode"), modeToggle),
      el("div", { class: "light-row" }, el("label", {}, "polar"), polar),
      el("div", { class: "light-row" }, el("label", {}, "azimuth"), azimuth),
      ...rows,
    );
  }

  onFrame(frame: TaggedFrame): void {
    if (this.frameUrl) URL.revokeObjectURL(this.frameUrl);
    this.frameUrl = URL.createObjectURL(new Blob([frame.png.slice().buffer], { type: "image/png" }));
    this.viewport.src = this.frameUrl;
    this.revisionBadge.textContent = `rev ${frame.revision}`;
  }

  onToast(message: string): void {
    const toast = el("div", { class: "toast" }, message);
    this.toastBox.append(toast);
    setTimeout(() => toast.remove(), 4000);
  }

  onJob(job: InvertJob | null): void {
    if (!job) {
      this.jobBar.hidden = true;
      this.jobLabel.textContent = "";
      return;
    }
    this.jobBar.hidden = false;
    this.jobLabel.textContent =
      job.status === "running"
        ? `iteration ${job.iteration}, loss ${job.loss?.toExponential(2) ?? "…"}`
        : job.status === "done"
          ? `done, PSNR ${job.psnr?.toFixed(1) ?? "?"} dB`
          : `failed: ${job.error ?? "unknown"}`;
    if (job.status !== "running") setTimeout(() => this.onJob(null), 4000);
  }

  private saveFrame(): void {
    const png = this.controller.saveFrame();
    if (!png) {
      this.onToast("no frame to save yet");
      return;
    }
    const url = URL.createObjectURL(new Blob([png.slice().buffer], { type: "image/png" }));
    const anchor = el("a", { href: url, download: "frame.png" });
    anchor.click();
    URL.revokeObjectURL(url);
  }

  private setEnabled(enabled: boolean): void {
    for (const control of this.controls) control.disabled = !enabled;
  }
}
