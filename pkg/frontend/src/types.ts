/** Wire documents exchanged with the workspace service. */

export interface Location {
  latitude: number;
  longitude: number;
}

export interface QueueItem {
  capture_id: number;
  workspace_id: string;
  changeset_id: number;
  /** class name -> instance count, only classes the pipeline detected */
  classes: Record<string, number>;
  has_sidewalk: boolean;
  locked: boolean;
}

export interface InstanceDoc {
  instance_id: number;
  class: string;
  /** contour vertices as [row, col] pixel pairs */
  polygon: Array<[number, number]>;
  /** [u, v] image coordinates */
  centroid: [number, number];
  location: Location;
}

export interface TrapezoidDoc {
  top_row: number;
  bottom_row: number;
  top_span: [number, number];
  bottom_span: [number, number];
}

export interface SidewalkDoc {
  width_m: number;
  location: Location;
  trapezoid: TrapezoidDoc | null;
}

export interface CaptureDoc {
  capture_id: number;
  timestamp: number;
  instances: InstanceDoc[];
  sidewalk: SidewalkDoc | null;
}

export type Decision = "agree" | "discard" | "missing";

export interface ClassVerdictBody {
  verdict: Decision;
  /** positions within the class's instance list, document order */
  rejected_instances: number[];
}

export interface VerdictBody {
  capture_id: number;
  width_accepted: boolean;
  verdicts: Record<string, ClassVerdictBody>;
}

export interface VerdictResponse {
  capture_id: number;
  /** ids of the nodes this verdict created */
  staged_nodes: number[];
  changeset_closed: boolean;
  way_id: number | null;
}

export interface ExportFeature {
  type: "Feature";
  id: number;
  geometry: { type: string; coordinates: unknown };
  properties: Record<string, unknown>;
}

export interface ExportDoc {
  type: "FeatureCollection";
  features: ExportFeature[];
}
