/** Drawing tool state: active tool, brush width, color role, and an undo
 * stack whose pops restore the exact prior StrokeSet. */

import type { ColorRole, Primitive, StrokeSet, Tool } from "./types.js";

export interface ToolLimits {
  minWidth: number;
  maxWidth: number;
}

export const DEFAULT_LIMITS: ToolLimits = { minWidth: 1, maxWidth: 13 };

export class ToolState {
  tool: Tool = "box";
  brushWidth = 3;
  clickSide = 7;
  colorRole: ColorRole = "primary";
  private strokes: Primitive[] = [];
  private undoStack: Primitive[][] = [];

  constructor(private limits: ToolLimits = DEFAULT_LIMITS) {}

  setTool(tool: Tool): void {
    this.tool = tool;
    // Negative color only makes sense for click-style cues.
    if (tool !== "click" && tool !== "negative_click") this.colorRole = "primary";
    if (tool === "negative_click") this.colorRole = "negative";
    if (tool === "click") this.colorRole = "primary";
  }

  setBrushWidth(w: number): void {
    this.brushWidth = Math.min(Math.max(w, this.limits.minWidth), this.limits.maxWidth);
  }

  setClickSide(s: number): void {
    this.clickSide = Math.min(Math.max(s, this.limits.minWidth), this.limits.maxWidth);
  }

  strokeSet(): StrokeSet {
    return { primitives: this.strokes.map((p) => structuredClone(p)) };
  }

  isEmpty(): boolean {
    return this.strokes.length === 0;
  }

  addPrimitive(prim: Primitive): void {
    this.undoStack.push(this.strokes.map((p) => structuredClone(p)));
    this.strokes.push(structuredClone(prim));
  }

  undo(): boolean {
    const prior = this.undoStack.pop();
    if (prior === undefined) return false;
    this.strokes = prior;
    return true;
  }

  clear(): void {
    if (this.strokes.length === 0) return;
    this.undoStack.push(this.strokes);
    this.strokes = [];
  }

  /** Build the primitive for a completed gesture from press to release. */
  gesturePrimitive(
    press: [number, number],
    release: [number, number],
    path: [number, number][],
  ): Primitive | null {
    switch (this.tool) {
      case "box":
        return { type: "box", corners: [press, release], width: this.brushWidth, color: "primary" };
      case "ellipse": {
        const cy = (press[0] + release[0]) / 2;
        const cx = (press[1] + release[1]) / 2;
        const ry = Math.abs(release[0] - press[0]) / 2;
        const rx = Math.abs(release[1] - press[1]) / 2;
        if (ry < 0.5 || rx < 0.5) return null;
        return { type: "ellipse", center: [cy, cx], radii: [ry, rx], width: this.brushWidth, color: "primary" };
      }
      case "click":
        return { type: "point", center: release, side: this.clickSide, color: "primary" };
      case "negative_click":
        return { type: "point", center: release, side: this.clickSide, color: "negative" };
      case "scribble":
        if (path.length === 0) return null;
        return { type: "polyline", points: path, width: this.brushWidth, color: "primary", freeform: false };
      case "freeform":
        if (path.length === 0) return null;
        return { type: "polyline", points: path, width: this.brushWidth, color: "primary", freeform: true };
    }
  }
}
