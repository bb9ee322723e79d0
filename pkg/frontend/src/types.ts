/** Shared types mirroring the render service's JSON payloads. */

export type Rgb = [number, number, number];

export type RenderMode =
  | "shaded"
  | "normal"
  | "ambient"
  | "diffuse"
  | "specular"
  | "depth"
  | "alpha";

export const RENDER_MODES: RenderMode[] = [
  "shaded",
  "normal",
  "ambient",
  "diffuse",
  "specular",
  "depth",
  "alpha",
];

export interface LightState {
  mode: "headlight" | "orbital";
  polar: number;
  azimuth: number;
  term_scales: [number, number, number, number];
}

export interface SceneEntry {
  index: number;
  transfer_function: unknown;
  palette: Rgb;
  opacity_scale: number;
  count: number;
}

export interface SceneSummary {
  revision: number;
  scenes: SceneEntry[];
  light: LightState;
  total_primitives: number;
  render_modes: RenderMode[];
}

/** Body of POST /api/edit; every field optional except the revision guard. */
export interface EditPayload {
  revision: number;
  scene?: number;
  palette?: Rgb;
  opacity_scale?: number;
  term_scales?: [number, number, number, number];
  light?: { mode?: "headlight" | "orbital"; polar?: number; azimuth?: number };
}

export interface Camera {
  polar: number;
  azimuth: number;
  radius: number;
  width: number;
  height: number;
  fov: number;
}

export interface InvertJob {
  status: "running" | "done" | "failed";
  iteration: number;
  loss: number | null;
  psnr: number | null;
  revision?: number;
  error?: string;
}

/** A frame as delivered over the stream: its revision tag plus PNG bytes. */
export interface TaggedFrame {
  revision: number;
  png: Uint8Array;
}
