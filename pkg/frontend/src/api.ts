/** Typed client for the QC review service HTTP API. */

import type { Report, ReviewDecision, SliceRef, Verdict } from './types.js';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}

async function toError(res: Response): Promise<ApiError> {
  let detail = res.statusText;
  try {
    const body = await res.json();
    if (typeof body.detail === 'string') {
      detail = body.detail;
    } else if (body.detail) {
      detail = JSON.stringify(body.detail);
    }
  } catch {
    // non-JSON error body; keep the status text
  }
  return new ApiError(res.status, detail);
}

export class ApiClient {
  constructor(readonly baseUrl: string = '') {}

  private async getJson<T>(path: string): Promise<T> {
    const res = await fetch(this.baseUrl + path);
    if (!res.ok) {
      throw await toError(res);
    }
    return (await res.json()) as T;
  }

  async listReports(): Promise<string[]> {
    const body = await this.getJson<{ reports: string[] }>('/api/reports');
    return body.reports;
  }

  getReport(volumeId: string): Promise<Report> {
    return this.getJson<Report>(`/api/reports/${encodeURIComponent(volumeId)}`);
  }

  /** Server-side what-if: verdicts recomputed at threshold T for both views. */
  async previewVerdicts(volumeId: string, t: number): Promise<Verdict[]> {
    const report = await this.getJson<Report>(
      `/api/reports/${encodeURIComponent(volumeId)}?threshold-preview=${t}`,
    );
    return report.verdicts;
  }

  thumbnailUrl(volumeId: string, ref: SliceRef): string {
    return (
      `${this.baseUrl}/api/slices/${encodeURIComponent(volumeId)}` +
      `/${ref.view}/${ref.gradient}/${ref.index}.png`
    );
  }

  async postDecision(decision: ReviewDecision): Promise<void> {
    const res = await fetch(`${this.baseUrl}/api/decisions`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(decision),
    });
    if (!res.ok) {
      throw await toError(res);
    }
  }

  async exportLabels(): Promise<string> {
    const res = await fetch(`${this.baseUrl}/api/export/labels`);
    if (!res.ok) {
      throw await toError(res);
    }
    return res.text();
  }
}
