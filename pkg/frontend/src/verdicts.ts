/** Client-side volume-verdict math, bit-identical to the server rule. */

import type { SliceEntry, Verdict, View } from './types.js';

/** A volume is artifactual iff it has strictly more flagged slices than T. */
export const volumeFlag = (flagCount: number, threshold: number): boolean =>
  flagCount > threshold;

export interface ThresholdPair {
  axial: number;
  sagittal: number;
}

/** Recompute per-(view, gradient) verdicts from slice flags alone. */
export function recomputeVerdicts(slices: SliceEntry[], thresholds: ThresholdPair): Verdict[] {
  const counts = new Map<string, { view: View; gradient: number; flags: number }>();
  for (const s of slices) {
    const key = `${s.view}|${s.gradient}`;
    let entry = counts.get(key);
    if (!entry) {
      entry = { view: s.view, gradient: s.gradient, flags: 0 };
      counts.set(key, entry);
    }
    if (s.flag) {
      entry.flags += 1;
    }
  }
  return [...counts.values()]
    .sort((a, b) => (a.view === b.view ? a.gradient - b.gradient : a.view < b.view ? -1 : 1))
    .map(({ view, gradient, flags }) => ({
      view,
      gradient,
      flag: volumeFlag(flags, view === 'axial' ? thresholds.axial : thresholds.sagittal),
    }));
}

/** Count of flagged (view, gradient) volumes at a single threshold T. */
export const flaggedVolumeCount = (slices: SliceEntry[], t: number): number =>
  recomputeVerdicts(slices, { axial: t, sagittal: t }).filter((v) => v.flag).length;

/** Slices ordered by descending probability (likely artifacts first). */
export function sortByProbDesc(slices: SliceEntry[]): SliceEntry[] {
  return [...slices].sort((a, b) => b.prob - a.prob);
}
