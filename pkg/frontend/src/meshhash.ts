/** Deterministic hash of a mesh payload (FNV-1a over its canonical JSON);
 *  used to compare replayed sessions without keeping full geometry. */

import type { MeshPayload } from "./api.js";

export function hashString(text: string): string {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  return h.toString(16).padStart(8, "0");
}

export function hashMesh(mesh: MeshPayload): string {
  const canonical = JSON.stringify({ v: mesh.vertices, f: mesh.faces });
  return hashString(canonical);
}
