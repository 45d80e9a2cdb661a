export const API_SCHEMA = 1;

export interface ClassInfo {
  id: number;
  name: string;
}

export interface StyleInfo {
  id: string;
  thumbnail: string;
}

/** class id (as string, JSON keys) -> style id; absent classes are unstyled */
export type AssignmentEntries = Record<string, string>;

export interface TimingMessage {
  schema: number;
  type: "timing";
  frame_index: number;
  t_seg: number;
  t_style: number;
  t_composite: number;
  t_total: number;
  interval_ms: number;
}

export interface StatsResponse {
  schema: number;
  fps: number;
  window: number;
  frames_seen: number;
  stage_means_ms: Record<string, number>;
}

export type PutAssignmentResult =
  | { ok: true; entries: AssignmentEntries }
  | { ok: false; status: number; detail: string; offending?: { class_id: string; style_id: string } };

export type ConnectionStatus = "connecting" | "open" | "reconnecting";
