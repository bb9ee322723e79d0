/** Transport abstraction so the controller can run against the real
 * service in the browser and an in-memory mock in tests. */

import type { Camera, EditPayload, InvertJob, RenderMode, SceneSummary, TaggedFrame } from "./types.js";

export interface Transport {
  getScene(): Promise<SceneSummary>;
  postEdit(payload: EditPayload): Promise<{ revision: number }>;
  /** One frame over the interactive stream, tagged with its revision. */
  requestFrame(camera: Camera, mode: RenderMode): Promise<TaggedFrame>;
  startInvert(reference: Blob, camera: Camera, iters: number, lr: number): Promise<{ job_id: string }>;
  getInvert(jobId: string): Promise<InvertJob>;
}

export class HttpError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

async function unwrap<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      if (typeof body.detail === "string") detail = body.detail;
    } catch {
      /* non-JSON error body; keep statusText */
    }
    throw new HttpError(res.status, detail);
  }
  return res.json() as Promise<T>;
}

/** Frame bytes arrive as a 4-byte little-endian revision + PNG. */
export function splitTaggedFrame(bytes: Uint8Array): TaggedFrame {
  if (bytes.length < 4) throw new Error("frame shorter than its revision tag");
  const view = new DataView(bytes.buffer, bytes.byteOffset, 4);
  return { revision: view.getUint32(0, true), png: bytes.slice(4) };
}

export class ServiceTransport implements Transport {
  private ws: WebSocket | null = null;
  private pending: Array<{
    resolve: (f: TaggedFrame) => void;
    reject: (e: Error) => void;
  }> = [];

  constructor(private baseUrl: string = "") {}

  async getScene(): Promise<SceneSummary> {
    return unwrap(await fetch(`${this.baseUrl}/api/scene`));
  }

  async postEdit(payload: EditPayload): Promise<{ revision: number }> {
    return unwrap(
      await fetch(`${this.baseUrl}/api/edit`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(payload),
      }),
    );
  }

  private async socket(): Promise<WebSocket> {
    if (this.ws && this.ws.readyState === WebSocket.OPEN) return this.ws;
    const scheme = location.protocol === "https:" ? "wss" : "ws";
    const host = this.baseUrl ? new URL(this.baseUrl).host : location.host;
    const ws = new WebSocket(`${scheme}://${host}/api/stream`);
    ws.binaryType = "arraybuffer";
    ws.onmessage = (ev) => {
      const waiter = this.pending.shift();
      if (!waiter) return;
      if (typeof ev.data === "string") {
        const body = JSON.parse(ev.data);
        waiter.reject(new Error(body.error ?? "stream error"));
      } else {
        waiter.resolve(splitTaggedFrame(new Uint8Array(ev.data as ArrayBuffer)));
      }
    };
    ws.onclose = () => {
      for (const w of this.pending.splice(0)) w.reject(new Error("stream closed"));
      this.ws = null;
    };
    await new Promise<void>((resolve, reject) => {
      ws.onopen = () => resolve();
      ws.onerror = () => reject(new Error("stream connection failed"));
    });
    this.ws = ws;
    return ws;
  }

  async requestFrame(camera: Camera, mode: RenderMode): Promise<TaggedFrame> {
    const ws = await this.socket();
    const frame = new Promise<TaggedFrame>((resolve, reject) => {
      this.pending.push({ resolve, reject });
    });
    ws.send(JSON.stringify({ camera, mode }));
    return frame;
  }

  async startInvert(reference: Blob, camera: Camera, iters: number, lr: number): Promise<{ job_id: string }> {
    const form = new FormData();
    form.append("reference", reference, "reference.png");
    form.append("camera", JSON.stringify(camera));
    form.append("iters", String(iters));
    form.append("lr", String(lr));
    return unwrap(await fetch(`${this.baseUrl}/api/invert`, { method: "POST", body: form }));
  }

  async getInvert(jobId: string): Promise<InvertJob> {
    return unwrap(await fetch(`${this.baseUrl}/api/invert/${jobId}`));
  }
}
