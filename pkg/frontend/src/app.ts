/** Review app: browse volumes, triage flagged slices, explore thresholds. */

import { ApiClient, ApiError } from './api.js';
import { ReportView, exportedRowCount } from './report-view.js';
import type { SliceEntry, View } from './types.js';
import { sliceKey } from './types.js';

const REVIEWER_STORAGE_KEY = 'dmriqc.reviewer';

interface Elements {
  volumeList: HTMLElement;
  banner: HTMLElement;
  title: HTMLElement;
  verdictBar: HTMLElement;
  thresholds: HTMLElement;
  grid: HTMLElement;
  status: HTMLElement;
  exportButton: HTMLButtonElement;
  flaggedOnly: HTMLInputElement;
}

export class App {
  private api: ApiClient;
  private els: Elements;
  private view: ReportView | null = null;
  private selected = 0;
  private flaggedOnly = true;
  private reviewer: string;

  constructor(root: HTMLElement, api: ApiClient = new ApiClient()) {
    this.api = api;
    this.reviewer = localStorage.getItem(REVIEWER_STORAGE_KEY) ?? 'reviewer';
    this.els = buildLayout(root);
    this.els.exportButton.addEventListener('click', () => void this.exportLabels());
    this.els.flaggedOnly.addEventListener('change', () => {
      this.flaggedOnly = this.els.flaggedOnly.checked;
      this.selected = 0;
      this.renderGrid();
    });
    document.addEventListener('keydown', (ev) => this.onKey(ev));
  }

  async start(): Promise<void> {
    try {
      const ids = await this.api.listReports();
      this.renderVolumeList(ids);
      if (ids.length > 0) {
        await this.openVolume(ids[0]);
      } else {
        this.banner('No reports found. Run the qc command first.', 'warn');
      }
    } catch (err) {
      this.banner(`Cannot reach the review service: ${describe(err)}`, 'error');
    }
  }

  private banner(text: string, kind: 'info' | 'warn' | 'error' | '' = 'info'): void {
    this.els.banner.textContent = text;
    this.els.banner.className = kind ? `banner ${kind}` : 'banner hidden';
  }

  private status(text: string): void {
    this.els.status.textContent = text;
  }

  private renderVolumeList(ids: string[]): void {
    this.els.volumeList.replaceChildren(
      ...ids.map((id) => {
        const item = document.createElement('button');
        item.className = 'volume-item';
        item.textContent = id;
        item.dataset.volumeId = id;
        item.addEventListener('click', () => void this.openVolume(id));
        return item;
      }),
    );
  }

  async openVolume(id: string): Promise<void> {
    try {
      const report = await this.api.getReport(id);
      this.view = new ReportView(report);
      this.selected = 0;
      this.banner('', '');
      for (const el of this.els.volumeList.querySelectorAll('.volume-item')) {
        el.classList.toggle('active', (el as HTMLElement).dataset.volumeId === id);
      }
      this.renderAll();
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.banner(`No report for volume "${id}".`, 'warn');
      } else {
        this.banner(describe(err), 'error');
      }
    }
  }

  private renderAll(): void {
    if (!this.view) {
      return;
    }
    this.els.title.textContent = this.view.report.volume_id;
    this.renderThresholds();
    this.renderVerdicts();
    this.renderGrid();
    this.status(
      `${this.view.flaggedSlices.length} flagged of ${this.view.report.slices.length} slices | ` +
        `${this.view.decisionCount} decisions | keys: j/k move, a artifact, x clean`,
    );
  }

  private renderThresholds(): void {
    if (!this.view) {
      return;
    }
    const box = this.els.thresholds;
    box.replaceChildren();
    for (const view of ['axial', 'sagittal'] as View[]) {
      const wrap = document.createElement('label');
      wrap.className = 'threshold';
      const value = this.view.thresholds[view];
      const slider = document.createElement('input');
      slider.type = 'range';
      slider.min = '0';
      slider.max = '10';
      slider.step = '1';
      slider.value = String(value);
      const caption = document.createElement('span');
      caption.textContent = `${view} T=${value}`;
      slider.addEventListener('input', () => {
        this.view?.setThreshold(view, Number(slider.value));
        caption.textContent = `${view} T=${slider.value}`;
        this.renderVerdicts();
      });
      wrap.append(caption, slider);
      box.append(wrap);
    }
  }

  private renderVerdicts(): void {
    if (!this.view) {
      return;
    }
    const verdicts = this.view.verdicts;
    const bad = verdicts.filter((v) => v.flag);
    const bar = this.els.verdictBar;
    bar.replaceChildren();
    const summary = document.createElement('span');
    summary.className = bad.length ? 'verdict-summary bad' : 'verdict-summary ok';
    summary.textContent = bad.length
      ? `${bad.length} of ${verdicts.length} gradient volumes flagged`
      : this.view.isClean
        ? 'clean volume: no flagged slices'
        : 'no gradient volume over threshold';
    bar.append(summary);
    for (const v of verdicts) {
      const chip = document.createElement('span');
      chip.className = v.flag ? 'chip bad' : 'chip';
      chip.textContent = `${v.view} g${v.gradient}`;
      bar.append(chip);
    }
  }

  private visibleSlices(): SliceEntry[] {
    if (!this.view) {
      return [];
    }
    return this.flaggedOnly && !this.view.isClean ? this.view.flaggedSlices : this.view.slicesByProb;
  }

  private renderGrid(): void {
    if (!this.view) {
      return;
    }
    const slices = this.visibleSlices();
    const grid = this.els.grid;
    grid.replaceChildren();
    if (slices.length === 0) {
      const empty = document.createElement('p');
      empty.className = 'empty';
      empty.textContent = 'Nothing to review here.';
      grid.append(empty);
      return;
    }
    slices.forEach((slice, i) => {
      const card = document.createElement('div');
      card.className = 'card' + (i === this.selected ? ' selected' : '');
      card.dataset.key = sliceKey(slice);
      if (slice.flag) {
        const img = document.createElement('img');
        img.loading = 'lazy'; // thumbnails fetched only when scrolled into view
        img.src = this.api.thumbnailUrl(this.view!.report.volume_id, slice);
        img.alt = sliceKey(slice);
        img.addEventListener('error', () => img.classList.add('missing'));
        card.append(img);
      } else {
        const ph = document.createElement('div');
        ph.className = 'placeholder';
        ph.textContent = 'not flagged';
        card.append(ph);
      }
      const meta = document.createElement('div');
      meta.className = 'meta';
      meta.textContent = `${slice.view} g${slice.gradient} z${slice.index} p=${slice.prob.toFixed(3)}`;
      const decision = this.view!.decisionFor(slice);
      if (decision) {
        const badge = document.createElement('span');
        badge.className = decision.label === 1 ? 'badge artifact' : 'badge clean';
        badge.textContent = (decision.label === 1 ? 'artifact' : 'clean') + (decision.pending ? '…' : '');
        meta.append(' ', badge);
      }
      card.append(meta);
      card.addEventListener('click', () => {
        this.selected = i;
        this.renderGrid();
      });
      grid.append(card);
    });
  }

  private onKey(ev: KeyboardEvent): void {
    if (!this.view || ev.target instanceof HTMLInputElement) {
      return;
    }
    const slices = this.visibleSlices();
    if (slices.length === 0) {
      return;
    }
    switch (ev.key) {
      case 'j':
      case 'ArrowRight':
        this.selected = Math.min(this.selected + 1, slices.length - 1);
        this.renderGrid();
        break;
      case 'k':
      case 'ArrowLeft':
        this.selected = Math.max(this.selected - 1, 0);
        this.renderGrid();
        break;
      case 'a':
        void this.decide(slices[this.selected], 1);
        break;
      case 'x':
        void this.decide(slices[this.selected], 0);
        break;
      default:
        return;
    }
    ev.preventDefault();
  }

  async decide(slice: SliceEntry, label: 0 | 1): Promise<void> {
    if (!this.view) {
      return;
    }
    const view = this.view;
    view.apply(slice, label); // optimistic
    this.renderGrid();
    try {
      await this.api.postDecision(view.toDecision(slice, label, this.reviewer));
      view.settle(slice);
      this.selected = Math.min(this.selected + 1, this.visibleSlices().length - 1);
    } catch (err) {
      view.rollback(slice); // 400 and friends undo the optimistic mark
      this.banner(`Decision rejected: ${describe(err)}`, 'error');
    }
    this.renderAll();
  }

  async exportLabels(): Promise<void> {
    try {
      const csv = await this.api.exportLabels();
      const rows = exportedRowCount(csv);
      const blob = new Blob([csv], { type: 'text/csv' });
      const link = document.createElement('a');
      link.href = URL.createObjectURL(blob);
      link.download = 'expert-labels.csv';
      link.click();
      URL.revokeObjectURL(link.href);
      this.banner(`Exported ${rows} label row(s).`, 'info');
    } catch (err) {
      this.banner(`Export failed: ${describe(err)}`, 'error');
    }
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return `${err.status}: ${err.message}`;
  }
  return err instanceof Error ? err.message : String(err);
}

function buildLayout(root: HTMLElement): Elements {
  root.innerHTML = `
    <aside class="sidebar">
      <h1>dmriqc review</h1>
      <nav id="volume-list"></nav>
    </aside>
    <main class="content">
      <div id="banner" class="banner hidden"></div>
      <header class="volume-header">
        <h2 id="volume-title">–</h2>
        <div id="thresholds" class="thresholds"></div>
        <div class="controls">
          <label><input type="checkbox" id="flagged-only" checked> flagged only</label>
          <button id="export-button">Export labels</button>
        </div>
      </header>
      <div id="verdict-bar" class="verdict-bar"></div>
      <section id="slice-grid" class="grid"></section>
      <footer id="status" class="status"></footer>
    </main>
  `;
  return {
    volumeList: root.querySelector('#volume-list')!,
    banner: root.querySelector('#banner')!,
    title: root.querySelector('#volume-title')!,
    verdictBar: root.querySelector('#verdict-bar')!,
    thresholds: root.querySelector('#thresholds')!,
    grid: root.querySelector('#slice-grid')!,
    status: root.querySelector('#status')!,
    exportButton: root.querySelector('#export-button')! as HTMLButtonElement,
    flaggedOnly: root.querySelector('#flagged-only')! as HTMLInputElement,
  };
}
