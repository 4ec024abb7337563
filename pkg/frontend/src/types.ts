/** Wire types shared with the inference service. Coordinates are (row, col)
 * at model resolution. */

export type ColorRole = "primary" | "negative";

export interface PolylinePrimitive {
  type: "polyline";
  points: [number, number][];
  width: number;
  color: ColorRole;
  freeform: boolean;
}

export interface BoxPrimitive {
  type: "box";
  corners: [[number, number], [number, number]];
  width: number;
  color: ColorRole;
}

export interface EllipsePrimitive {
  type: "ellipse";
  center: [number, number];
  radii: [number, number];
  width: number;
  color: ColorRole;
}

export interface PointPrimitive {
  type: "point";
  center: [number, number];
  side: number;
  color: ColorRole;
}

export type Primitive =
  | PolylinePrimitive
  | BoxPrimitive
  | EllipsePrimitive
  | PointPrimitive;

export interface StrokeSet {
  primitives: Primitive[];
}

export type Tool =
  | "box"
  | "ellipse"
  | "scribble"
  | "click"
  | "negative_click"
  | "freeform";

export interface ServiceInfo {
  resolution: number;
  n_ctx: number;
  patch_size: number;
  codebook_size: number;
  model: {
    layers: number;
    heads: number;
    embed_dim: number;
    context_len: number;
    trained_steps: number;
  };
  tasks: string[];
  cue_kinds: string[];
  style: {
    primary_color: [number, number, number];
    negative_color: [number, number, number];
    line_width: number;
    click_side: number;
  };
  workers: number;
}

export interface SessionInfo {
  id: string;
  task: string;
  seed: number;
  resolution: number;
  n_ctx: number;
}

export interface ContextItem {
  input: string; // base64 PNG
  cue: string;
  target: string;
  blended: string;
  cue_kind: string;
}

export interface PredictResponse {
  prediction: string;
  blended: string;
  cue_kind: string | null;
  mode: "single" | "tbt";
  metrics?: { iou?: number; ssim: number; psnr: number };
}

export interface ApiError {
  code: string;
  message: string;
}
