/** Cue blending: out = alpha * image + (1 - alpha) * cue on active pixels,
 * untouched elsewhere. The preview uses alpha = 0 (overwrite), matching the
 * server's blended echo. Operates on 8-bit RGBA canvas pixel buffers. */

import type { RasterCue } from "./raster.js";

export function blendIntoRgba(
  base: Uint8ClampedArray, // RGBA, length h*w*4
  cue: RasterCue,
  alpha: number,
): Uint8ClampedArray {
  const out = base.slice();
  const n = cue.active.data.length;
  for (let i = 0; i < n; i++) {
    if (!cue.active.data[i]) continue;
    for (let c = 0; c < 3; c++) {
      const cueVal = cue.rgb[i * 3 + c] * 255;
      out[i * 4 + c] = Math.round(alpha * base[i * 4 + c] + (1 - alpha) * cueVal);
    }
    out[i * 4 + 3] = 255;
  }
  return out;
}
