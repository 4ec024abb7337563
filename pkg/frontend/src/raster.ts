/** Client-side rasterization mirroring the server's geometry exactly, so the
 * local preview agrees with the server's blended echo pixel for pixel
 * (up to 8-bit PNG quantization, which only affects colors, not geometry). */

import type { Primitive, StrokeSet } from "./types.js";

export type BoolGrid = { h: number; w: number; data: Uint8Array };

export function emptyGrid(h: number, w: number): BoolGrid {
  return { h, w, data: new Uint8Array(h * w) };
}

function set(g: BoolGrid, y: number, x: number): void {
  if (y >= 0 && y < g.h && x >= 0 && x < g.w) g.data[y * g.w + x] = 1;
}

/** Bresenham midpoint line, inclusive of both endpoints. */
export function linePixels(
  y0: number,
  x0: number,
  y1: number,
  x1: number,
): [number, number][] {
  const pts: [number, number][] = [];
  const dy = Math.abs(y1 - y0);
  const dx = Math.abs(x1 - x0);
  const sy = y0 < y1 ? 1 : -1;
  const sx = x0 < x1 ? 1 : -1;
  let err = dx - dy;
  let y = y0;
  let x = x0;
  for (;;) {
    pts.push([y, x]);
    if (y === y1 && x === x1) break;
    const e2 = 2 * err;
    if (e2 > -dy) {
      err -= dy;
      x += sx;
    }
    if (e2 < dx) {
      err += dx;
      y += sy;
    }
  }
  return pts;
}

/** Square-structuring-element dilation: offsets -floor((w-1)/2) .. floor(w/2). */
export function dilateSquare(g: BoolGrid, width: number): BoolGrid {
  if (width <= 1) return { h: g.h, w: g.w, data: g.data.slice() };
  const out = emptyGrid(g.h, g.w);
  const lo = -Math.floor((width - 1) / 2);
  const hi = Math.floor(width / 2);
  for (let y = 0; y < g.h; y++) {
    for (let x = 0; x < g.w; x++) {
      if (!g.data[y * g.w + x]) continue;
      for (let dy = lo; dy <= hi; dy++) {
        for (let dx = lo; dx <= hi; dx++) set(out, y + dy, x + dx);
      }
    }
  }
  return out;
}

/** Outline band between the rectangle grown by `width` and the rectangle. */
export function boxOutline(
  h: number,
  w: number,
  r0: number,
  r1: number,
  c0: number,
  c1: number,
  width: number,
): BoolGrid {
  const g = emptyGrid(h, w);
  const er0 = Math.max(0, r0 - width);
  const er1 = Math.min(h - 1, r1 + width);
  const ec0 = Math.max(0, c0 - width);
  const ec1 = Math.min(w - 1, c1 + width);
  for (let y = er0; y <= er1; y++)
    for (let x = ec0; x <= ec1; x++) g.data[y * w + x] = 1;
  const ir0 = Math.max(0, r0);
  const ir1 = Math.min(h - 1, r1);
  const ic0 = Math.max(0, c0);
  const ic1 = Math.min(w - 1, c1);
  for (let y = ir0; y <= ir1; y++)
    for (let x = ic0; x <= ic1; x++) g.data[y * w + x] = 0;
  return g;
}

/** Parametric ellipse ring grown outward from semi-axes (a, b), stamped with
 * a square of side `width`; centerline at (a + width/2, b + width/2). */
export function ellipseRing(
  h: number,
  w: number,
  cy: number,
  cx: number,
  a: number,
  b: number,
  width: number,
): BoolGrid {
  const g = emptyGrid(h, w);
  const ca = a + width / 2;
  const cb = b + width / 2;
  const n = Math.max(64, Math.trunc(8 * Math.PI * Math.max(ca, cb)));
  const lo = -Math.floor((width - 1) / 2);
  const hi = Math.floor(width / 2);
  for (let i = 0; i < n; i++) {
    const t = (2 * Math.PI * i) / n;
    const ys = Math.round(cy + ca * Math.sin(t));
    const xs = Math.round(cx + cb * Math.cos(t));
    for (let dy = lo; dy <= hi; dy++) {
      for (let dx = lo; dx <= hi; dx++) set(g, ys + dy, xs + dx);
    }
  }
  return g;
}

/** Filled square of the given side centered at (cy, cx), clipped. */
export function squareAt(
  h: number,
  w: number,
  cy: number,
  cx: number,
  side: number,
): BoolGrid {
  const g = emptyGrid(h, w);
  const lo = -Math.floor((side - 1) / 2);
  const hi = Math.floor(side / 2);
  for (let dy = lo; dy <= hi; dy++) {
    for (let dx = lo; dx <= hi; dx++) set(g, cy + dy, cx + dx);
  }
  return g;
}

function clampPoint(p: [number, number], h: number, w: number): [number, number] {
  return [
    Math.min(Math.max(Math.trunc(p[0]), 0), h - 1),
    Math.min(Math.max(Math.trunc(p[1]), 0), w - 1),
  ];
}

export function rasterizePrimitive(
  prim: Primitive,
  h: number,
  w: number,
): BoolGrid {
  switch (prim.type) {
    case "box": {
      const [p0, p1] = [clampPoint(prim.corners[0], h, w), clampPoint(prim.corners[1], h, w)];
      return boxOutline(
        h,
        w,
        Math.min(p0[0], p1[0]),
        Math.max(p0[0], p1[0]),
        Math.min(p0[1], p1[1]),
        Math.max(p0[1], p1[1]),
        prim.width,
      );
    }
    case "ellipse":
      return ellipseRing(h, w, prim.center[0], prim.center[1], prim.radii[0], prim.radii[1], prim.width);
    case "point": {
      const [cy, cx] = clampPoint(prim.center, h, w);
      return squareAt(h, w, cy, cx, prim.side);
    }
    case "polyline": {
      const path = emptyGrid(h, w);
      const pts = prim.points.map((p) => clampPoint(p, h, w));
      if (pts.length === 1) set(path, pts[0][0], pts[0][1]);
      for (let i = 0; i + 1 < pts.length; i++) {
        for (const [y, x] of linePixels(pts[i][0], pts[i][1], pts[i + 1][0], pts[i + 1][1])) {
          set(path, y, x);
        }
      }
      return dilateSquare(path, prim.width);
    }
  }
}

export interface RasterCue {
  /** RGB in [0,1], row-major, length h*w*3; black outside active pixels. */
  rgb: Float64Array;
  active: BoolGrid;
}

/** Rasterize a whole stroke set; later primitives overwrite earlier ones. */
export function rasterizeStrokes(
  strokes: StrokeSet,
  h: number,
  w: number,
  primaryColor: [number, number, number],
  negativeColor: [number, number, number],
): RasterCue {
  const rgb = new Float64Array(h * w * 3);
  const active = emptyGrid(h, w);
  for (const prim of strokes.primitives) {
    const color = prim.color === "negative" ? negativeColor : primaryColor;
    const g = rasterizePrimitive(prim, h, w);
    for (let i = 0; i < g.data.length; i++) {
      if (g.data[i]) {
        active.data[i] = 1;
        rgb[i * 3] = color[0];
        rgb[i * 3 + 1] = color[1];
        rgb[i * 3 + 2] = color[2];
      }
    }
  }
  return { rgb, active };
}
