/** Wire types mirrored from the QC service (report.json schema v1). */

export type View = 'axial' | 'sagittal';

export interface SliceEntry {
  view: View;
  gradient: number;
  index: number;
  prob: number;
  flag: boolean;
}

export interface Verdict {
  view: View;
  gradient: number;
  flag: boolean;
}

export interface Report {
  version: number;
  volume_id: string;
  thresholds: { axial: number; sagittal: number };
  models: Record<string, unknown>;
  slices: SliceEntry[];
  verdicts: Verdict[];
  tool_version?: string;
  created?: string;
  threshold_preview?: number;
}

export interface ReviewDecision {
  volume_id: string;
  view: View;
  gradient_index: number;
  slice_index: number;
  expert_label: 0 | 1;
  prior_flag: boolean;
  reviewer: string;
}

export interface SliceRef {
  view: View;
  gradient: number;
  index: number;
}

export const sliceKey = (ref: SliceRef): string =>
  `${ref.view}/${ref.gradient}/${ref.index}`;
