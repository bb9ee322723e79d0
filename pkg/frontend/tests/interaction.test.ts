/** The recorded interaction script: load, recolor scene 0, hide scene 1,
 * switch to normal mode, save the frame.  Asserts the exact request log
 * and that the opacity-zero frame is the CLI single-scene render. */

import { describe, expect, it } from "vitest";
import { EditorController } from "../src/controller.js";
import type { Scheduler } from "../src/debounce.js";
import type { TaggedFrame } from "../src/types.js";
import { FIXTURES, MockService } from "./mockService.js";

/** Deterministic scheduler: timers fire only when advance() is called. */
class ManualScheduler implements Scheduler {
  private pending = new Map<number, { fn: () => void; ms: number }>();
  private next = 1;
  set(fn: () => void, ms: number): unknown {
    this.pending.set(this.next, { fn, ms });
    return this.next++;
  }
  clear(handle: unknown): void {
    this.pending.delete(handle as number);
  }
  fireAll(): void {
    const due = [...this.pending.values()];
    this.pending.clear();
    for (const { fn } of due) fn();
  }
  get count(): number {
    return this.pending.size;
  }
}

const CAMERA = { polar: 0.4, azimuth: 0.8, radius: 2.5, width: 128, height: 128, fov: 0.8 };

async function settle(): Promise<void> {
  for (let i = 0; i < 10; i++) await Promise.resolve();
}

describe("recorded interaction script", () => {
  it("produces the exact expected request log and frames", async () => {
    const service = new MockService();
    const scheduler = new ManualScheduler();
    const frames: TaggedFrame[] = [];
    const controller = new EditorController(
      service,
      { onFrame: (f) => frames.push(f) },
      scheduler,
    );
    controller.camera = { ...CAMERA };

    // 1. load
    await controller.load();
    await settle();
    expect(frames.at(-1)?.revision).toBe(0);
    expect(frames.at(-1)?.png).toEqual(FIXTURES.initial());

    // 2. recolor scene 0
    controller.setPalette(0, [0.9, 0.2, 0.1]);
    scheduler.fireAll();
    await settle();
    expect(controller.revision).toBe(1);
    expect(frames.at(-1)?.revision).toBe(1);
    expect(frames.at(-1)?.png).toEqual(FIXTURES.recolored());

    // 3. zero the opacity of scene 1 — the frame must equal the CLI
    // render of the recolored scene-0 model alone
    controller.setOpacity(1, 0);
    scheduler.fireAll();
    await settle();
    expect(controller.revision).toBe(2);
    expect(frames.at(-1)?.revision).toBe(2);
    expect(frames.at(-1)?.png).toEqual(FIXTURES.scene0Only());

    // 4. switch to the normal render mode
    controller.setMode("normal");
    await settle();
    expect(frames.at(-1)?.png).toEqual(FIXTURES.normal());

    // 5. save: the downloaded bytes are exactly the displayed frame
    expect(controller.saveFrame()).toEqual(FIXTURES.normal());

    expect(service.log).toEqual([
      { method: "GET", path: "/api/scene" },
      { method: "WS", path: "/api/stream", body: { camera: CAMERA, mode: "shaded" } },
      {
        method: "POST",
        path: "/api/edit",
        body: { revision: 0, scene: 0, palette: [0.9, 0.2, 0.1] },
      },
      { method: "WS", path: "/api/stream", body: { camera: CAMERA, mode: "shaded" } },
      {
        method: "POST",
        path: "/api/edit",
        body: { revision: 1, scene: 1, opacity_scale: 0 },
      },
      { method: "WS", path: "/api/stream", body: { camera: CAMERA, mode: "shaded" } },
      { method: "WS", path: "/api/stream", body: { camera: CAMERA, mode: "normal" } },
    ]);
  });

  it("keeps the displayed revision equal to the frame tag throughout", async () => {
    const service = new MockService();
    const scheduler = new ManualScheduler();
    const seen: Array<{ tag: number; known: number }> = [];
    const controller = new EditorController(
      service,
      { onFrame: (f) => seen.push({ tag: f.revision, known: controller.revision }) },
      scheduler,
    );
    await controller.load();
    await settle();
    controller.setOpacity(0, 0.5);
    scheduler.fireAll();
    await settle();
    controller.setPalette(1, [0, 0, 1]);
    scheduler.fireAll();
    await settle();
    expect(seen.length).toBeGreaterThanOrEqual(3);
    for (const { tag, known } of seen) expect(tag).toBe(known);
  });
});
