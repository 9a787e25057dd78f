import { describe, expect, it } from 'vitest';

import type { SliceEntry } from '../src/types.js';
import { flaggedVolumeCount, recomputeVerdicts, sortByProbDesc, volumeFlag } from '../src/verdicts.js';

const slice = (overrides: Partial<SliceEntry>): SliceEntry => ({
  view: 'axial',
  gradient: 0,
  index: 0,
  prob: 0.5,
  flag: false,
  ...overrides,
});

describe('volumeFlag', () => {
  it('uses the strict greater-than rule', () => {
    expect(volumeFlag(4, 3)).toBe(true);
    expect(volumeFlag(3, 3)).toBe(false);
    expect(volumeFlag(0, 0)).toBe(false);
    expect(volumeFlag(1, 0)).toBe(true);
  });
});

describe('recomputeVerdicts', () => {
  const slices: SliceEntry[] = [
    ...Array.from({ length: 5 }, (_, i) => slice({ gradient: 0, index: i, flag: i < 4 })),
    ...Array.from({ length: 5 }, (_, i) => slice({ gradient: 1, index: i, flag: i < 2 })),
    ...Array.from({ length: 9 }, (_, i) =>
      slice({ view: 'sagittal', gradient: 0, index: i, flag: i < 8 }),
    ),
  ];

  it('counts flags per (view, gradient) and applies per-view thresholds', () => {
    const verdicts = recomputeVerdicts(slices, { axial: 3, sagittal: 7 });
    expect(verdicts).toEqual([
      { view: 'axial', gradient: 0, flag: true }, // 4 > 3
      { view: 'axial', gradient: 1, flag: false }, // 2 > 3 fails
      { view: 'sagittal', gradient: 0, flag: true }, // 8 > 7
    ]);
  });

  it('covers every (view, gradient) even when nothing is flagged', () => {
    const clean = slices.map((s) => ({ ...s, flag: false }));
    const verdicts = recomputeVerdicts(clean, { axial: 0, sagittal: 0 });
    expect(verdicts).toHaveLength(3);
    expect(verdicts.every((v) => !v.flag)).toBe(true);
  });

  it('flagged-volume count is non-increasing in T (slider monotonicity)', () => {
    let previous = Number.POSITIVE_INFINITY;
    for (let t = 1; t <= 10; t += 1) {
      const count = flaggedVolumeCount(slices, t);
      expect(count).toBeLessThanOrEqual(previous);
      previous = count;
    }
  });

  it('flagged sets are nested as T grows', () => {
    let previous: Set<string> | null = null;
    for (let t = 1; t <= 10; t += 1) {
      const flagged = new Set(
        recomputeVerdicts(slices, { axial: t, sagittal: t })
          .filter((v) => v.flag)
          .map((v) => `${v.view}|${v.gradient}`),
      );
      if (previous !== null) {
        for (const key of flagged) {
          expect(previous.has(key)).toBe(true);
        }
      }
      previous = flagged;
    }
  });
});

describe('sortByProbDesc', () => {
  it('front-loads likely artifacts and leaves the input untouched', () => {
    const input = [slice({ prob: 0.2 }), slice({ prob: 0.9 }), slice({ prob: 0.5 })];
    const sorted = sortByProbDesc(input);
    expect(sorted.map((s) => s.prob)).toEqual([0.9, 0.5, 0.2]);
    expect(input.map((s) => s.prob)).toEqual([0.2, 0.9, 0.5]);
  });
});
