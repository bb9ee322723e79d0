/** Client-side mirror of the service's edit-payload contract, used to
 * validate outgoing requests in contract tests before they hit the wire. */

import type { EditPayload } from "./types.js";

const KNOWN_KEYS = new Set(["revision", "scene", "palette", "opacity_scale", "term_scales", "light"]);
const LIGHT_KEYS = new Set(["mode", "polar", "azimuth"]);

function isFiniteNumber(x: unknown): x is number {
  return typeof x === "number" && Number.isFinite(x);
}

function isNumberTuple(x: unknown, n: number): boolean {
  return Array.isArray(x) && x.length === n && x.every(isFiniteNumber);
}

/** Returns a list of violations; empty means the payload is valid. */
export function validateEditPayload(payload: unknown): string[] {
  const errors: string[] = [];
  if (typeof payload !== "object" || payload === null || Array.isArray(payload)) {
    return ["payload must be a JSON object"];
  }
  const p = payload as Record<string, unknown>;
  for (const key of Object.keys(p)) {
    if (!KNOWN_KEYS.has(key)) errors.push(`unknown field: ${key}`);
  }
  if (!Number.isInteger(p.revision) || (p.revision as number) < 0) {
    errors.push("revision must be a non-negative integer");
  }
  if ("scene" in p && (!Number.isInteger(p.scene) || (p.scene as number) < 0)) {
    errors.push("scene must be a non-negative integer index");
  }
  if ("palette" in p) {
    if (!isNumberTuple(p.palette, 3) || (p.palette as number[]).some((v) => v < 0 || v > 1)) {
      errors.push("palette must be three numbers in [0, 1]");
    }
  }
  if ("opacity_scale" in p && (!isFiniteNumber(p.opacity_scale) || p.opacity_scale < 0)) {
    errors.push("opacity_scale must be a non-negative number");
  }
  if ("term_scales" in p) {
    if (!isNumberTuple(p.term_scales, 4) || (p.term_scales as number[]).some((v) => v <= 0)) {
      errors.push("term_scales must be four strictly positive numbers");
    }
  }
  if ("light" in p) {
    const light = p.light;
    if (typeof light !== "object" || light === null || Array.isArray(light)) {
      errors.push("light must be an object");
    } else {
      const l = light as Record<string, unknown>;
      for (const key of Object.keys(l)) {
        if (!LIGHT_KEYS.has(key)) errors.push(`unknown light field: ${key}`);
      }
      if ("mode" in l && l.mode !== "headlight" && l.mode !== "orbital") {
        errors.push("light.mode must be 'headlight' or 'orbital'");
      }
      if ("polar" in l && !isFiniteNumber(l.polar)) errors.push("light.polar must be a number");
      if ("azimuth" in l && !isFiniteNumber(l.azimuth)) errors.push("light.azimuth must be a number");
    }
  }
  return errors;
}

export function assertValidEdit(payload: EditPayload): void {
  const errors = validateEditPayload(payload);
  if (errors.length > 0) throw new Error(`invalid edit payload: ${errors.join("; ")}`);
}
