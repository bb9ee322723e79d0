/** Editor state machine, independent of the DOM.
 *
 * Owns the orbit camera, the edit revision, the frame pipeline (at most
 * one in-flight request; a newer request supersedes a queued one), the
 * 50 ms last-write-wins debounce on slider/picker edits, and inverse-job
 * polling.  The UI layer subscribes through `EditorEvents`.
 */

import { debounce, type Scheduler } from "./debounce.js";
import type { Transport } from "./transport.js";
import type {
  Camera,
  EditPayload,
  InvertJob,
  RenderMode,
  Rgb,
  SceneSummary,
  TaggedFrame,
} from "./types.js";

export const EDIT_DEBOUNCE_MS = 50;
const POLAR_LIMIT = Math.PI / 2;

export interface EditorEvents {
  onScene?(summary: SceneSummary): void;
  onFrame?(frame: TaggedFrame): void;
  onToast?(message: string): void;
  onJob?(job: InvertJob | null): void;
}

export class EditorController {
  camera: Camera = { polar: 0.4, azimuth: 0.8, radius: 2.5, width: 512, height: 512, fov: 0.8 };
  mode: RenderMode = "shaded";
  revision = 0;
  scene: SceneSummary | null = null;
  lastFrame: TaggedFrame | null = null;

  private inFlight = false;
  private wantFrame = false;
  private debouncers = new Map<string, (fire: () => void) => void>();
  private pollHandle: unknown = null;

  constructor(
    private transport: Transport,
    public events: EditorEvents = {},
    private scheduler?: Scheduler,
  ) {}

  get loaded(): boolean {
    return this.scene !== null;
  }

  async load(): Promise<void> {
    try {
      this.scene = await this.transport.getScene();
      this.revision = this.scene.revision;
      this.events.onScene?.(this.scene);
      this.requestFrame();
    } catch (err) {
      this.scene = null;
      this.events.onToast?.(String((err as Error).message ?? err));
    }
  }

  /** Viewport drag: inertia-free orbit, polar clamped to +-90 degrees. */
  orbitBy(dPolar: number, dAzimuth: number): void {
    this.camera.polar = Math.min(POLAR_LIMIT, Math.max(-POLAR_LIMIT, this.camera.polar + dPolar));
    this.camera.azimuth += dAzimuth;
    this.requestFrame();
  }

  zoomBy(factor: number): void {
    this.camera.radius = Math.max(1e-3, this.camera.radius * factor);
    this.requestFrame();
  }

  setMode(mode: RenderMode): void {
    this.mode = mode;
    this.requestFrame();
  }

  setPalette(sceneIndex: number, palette: Rgb): void {
    this.debouncedEdit(`palette:${sceneIndex}`, () => ({ scene: sceneIndex, palette }));
  }

  setOpacity(sceneIndex: number, opacity: number): void {
    this.debouncedEdit(`opacity:${sceneIndex}`, () => ({ scene: sceneIndex, opacity_scale: opacity }));
  }

  setLight(light: EditPayload["light"]): void {
    this.debouncedEdit("light", () => ({ light }));
  }

  setTermScales(scales: [number, number, number, number]): void {
    this.debouncedEdit("term_scales", () => ({ term_scales: scales }));
  }

  /** Immediate (undebounced) edit; exposed for tests and programmatic use. */
  async edit(fields: Omit<EditPayload, "revision">): Promise<void> {
    if (!this.loaded) {
      this.events.onToast?.("no model loaded");
      return;
    }
    try {
      const res = await this.transport.postEdit({ revision: this.revision, ...fields });
      this.revision = res.revision;
      this.applyLocally(fields);
      this.requestFrame();
    } catch (err) {
      this.events.onToast?.(String((err as Error).message ?? err));
      // A concurrent editor won the race: re-sync panels to the server.
      await this.load();
    }
  }

  /** PNG bytes of the frame currently on screen, for the save button. */
  saveFrame(): Uint8Array | null {
    return this.lastFrame ? this.lastFrame.png : null;
  }

  async startInvert(reference: Blob, iters = 1000, lr = 0.01): Promise<void> {
    if (!this.loaded) {
      this.events.onToast?.("no model loaded");
      return;
    }
    try {
      const { job_id } = await this.transport.startInvert(reference, this.camera, iters, lr);
      this.pollInvert(job_id);
    } catch (err) {
      this.events.onToast?.(String((err as Error).message ?? err));
    }
  }

  private pollInvert(jobId: string): void {
    const tick = async () => {
      let job: InvertJob;
      try {
        job = await this.transport.getInvert(jobId);
      } catch (err) {
        this.events.onToast?.(String((err as Error).message ?? err));
        this.events.onJob?.(null);
        return;
      }
      this.events.onJob?.(job);
      if (job.status === "running") {
        this.pollHandle = this.setTimer(tick, 250);
        return;
      }
      this.pollHandle = null;
      if (job.status === "failed") {
        this.events.onToast?.(job.error ?? "inverse fit failed");
        return;
      }
      // Fit applied server-side: repopulate panels from the new revision.
      await this.load();
    };
    void tick();
  }

  requestFrame(): void {
    if (!this.loaded) return;
    this.wantFrame = true;
    void this.pumpFrames();
  }

  private async pumpFrames(): Promise<void> {
    if (this.inFlight) return; // the in-flight reply will re-pump
    while (this.wantFrame) {
      this.wantFrame = false;
      this.inFlight = true;
      try {
        // Snapshot so a drag during the await can't mutate the request.
        const frame = await this.transport.requestFrame({ ...this.camera }, this.mode);
        if (frame.revision >= this.revision && !this.wantFrame) {
          this.lastFrame = frame;
          this.events.onFrame?.(frame);
        }
        // Stale or superseded frames are dropped; the loop re-requests.
        if (frame.revision < this.revision) this.wantFrame = true;
      } catch (err) {
        this.events.onToast?.(String((err as Error).message ?? err));
      } finally {
        this.inFlight = false;
      }
    }
  }

  private debouncedEdit(key: string, build: () => Omit<EditPayload, "revision">): void {
    let d = this.debouncers.get(key);
    if (!d) {
      d = debounce<() => void>((fire) => fire(), EDIT_DEBOUNCE_MS, this.scheduler);
      this.debouncers.set(key, d);
    }
    d(() => void this.edit(build()));
  }

  /** Mirror a successful edit into the cached summary so panels and the
   * revision badge stay consistent without a reload round-trip. */
  private applyLocally(fields: Omit<EditPayload, "revision">): void {
    if (!this.scene) return;
    this.scene.revision = this.revision;
    const entry = fields.scene !== undefined ? this.scene.scenes[fields.scene] : undefined;
    if (entry) {
      if (fields.palette) entry.palette = fields.palette;
      if (fields.opacity_scale !== undefined) entry.opacity_scale = fields.opacity_scale;
    }
    if (fields.term_scales) this.scene.light.term_scales = fields.term_scales;
    if (fields.light) {
      if (fields.light.mode !== undefined) this.scene.light.mode = fields.light.mode;
      if (fields.light.polar !== undefined) this.scene.light.polar = fields.light.polar;
      if (fields.light.azimuth !== undefined) this.scene.light.azimuth = fields.light.azimuth;
    }
    this.events.onScene?.(this.scene);
  }

  private setTimer(fn: () => void, ms: number): unknown {
    return this.scheduler ? this.scheduler.set(fn, ms) : setTimeout(fn, ms);
  }
}
