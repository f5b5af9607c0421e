/** Thin client for the analytics service; all numbers come from the backend. */

import type {
  DatasetInfo,
  JobSummary,
  PlanTraceJson,
  PredicateJson,
  QueryRequest,
} from "./types";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, {
      headers: { "content-type": "application/json" },
      ...init,
    });
    if (!res.ok) {
      const body = await res.text();
      throw new ApiError(res.status, `${res.status} ${path}: ${body}`);
    }
    return (await res.json()) as T;
  }

  listDatasets(): Promise<DatasetInfo[]> {
    return this.request("/datasets");
  }

  countDocs(dataset: string, predicate: PredicateJson): Promise<{ count: number }> {
    return this.request(`/datasets/${encodeURIComponent(dataset)}/count`, {
      method: "POST",
      body: JSON.stringify({ predicate }),
    });
  }

  submitQuery(req: QueryRequest): Promise<{ job_id: string }> {
    return this.request("/queries", {
      method: "POST",
      body: JSON.stringify(req),
    });
  }

  submitBatch(queries: QueryRequest[]): Promise<{ job_id: string }> {
    return this.request("/batches", {
      method: "POST",
      body: JSON.stringify({ queries }),
    });
  }

  getJob(jobId: string): Promise<JobSummary> {
    return this.request(`/jobs/${encodeURIComponent(jobId)}`);
  }

  getTrace(jobId: string): Promise<PlanTraceJson> {
    return this.request(`/jobs/${encodeURIComponent(jobId)}/trace`);
  }

  queryRequestSchema(): Promise<object> {
    return this.request("/schemas/query_request");
  }
}
