/** Local review state for one report: decision overlay + active thresholds. */

import type { Report, ReviewDecision, SliceEntry, View } from './types.js';
import { sliceKey } from './types.js';
import { recomputeVerdicts, sortByProbDesc, type ThresholdPair } from './verdicts.js';
import type { Verdict } from './types.js';

export interface OverlayEntry {
  label: 0 | 1;
  pending: boolean;
}

export class ReportView {
  readonly report: Report;
  thresholds: ThresholdPair;
  /** slice key -> latest decision; a repeat decision replaces the prior one */
  private overlay = new Map<string, OverlayEntry>();

  constructor(report: Report) {
    this.report = report;
    this.thresholds = { ...report.thresholds };
  }

  get slicesByProb(): SliceEntry[] {
    return sortByProbDesc(this.report.slices);
  }

  get flaggedSlices(): SliceEntry[] {
    return this.slicesByProb.filter((s) => s.flag);
  }

  get isClean(): boolean {
    return this.report.slices.every((s) => !s.flag);
  }

  /** Verdicts recomputed client-side at the active thresholds. */
  get verdicts(): Verdict[] {
    return recomputeVerdicts(this.report.slices, this.thresholds);
  }

  verdictsAt(t: number): Verdict[] {
    return recomputeVerdicts(this.report.slices, { axial: t, sagittal: t });
  }

  setThreshold(view: View, value: number): void {
    this.thresholds = { ...this.thresholds, [view]: value };
  }

  decisionFor(slice: SliceEntry): OverlayEntry | undefined {
    return this.overlay.get(sliceKey(slice));
  }

  /** Optimistic local apply; call settle/rollback after the POST resolves. */
  apply(slice: SliceEntry, label: 0 | 1): void {
    this.overlay.set(sliceKey(slice), { label, pending: true });
  }

  settle(slice: SliceEntry): void {
    const entry = this.overlay.get(sliceKey(slice));
    if (entry) {
      entry.pending = false;
    }
  }

  rollback(slice: SliceEntry): void {
    this.overlay.delete(sliceKey(slice));
  }

  get decisionCount(): number {
    return this.overlay.size;
  }

  toDecision(slice: SliceEntry, label: 0 | 1, reviewer: string): ReviewDecision {
    return {
      volume_id: this.report.volume_id,
      view: slice.view,
      gradient_index: slice.gradient,
      slice_index: slice.index,
      expert_label: label,
      prior_flag: slice.flag,
      reviewer,
    };
  }
}

/** Rows (excluding header) of an exported label CSV. */
export function exportedRowCount(csvText: string): number {
  return csvText.split('\n').filter((line, i) => i > 0 && line.trim().length > 0).length;
}
