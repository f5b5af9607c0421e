/** Poll a job until it reaches a terminal state. */

import type { ApiClient } from "./api";
import type { JobSummary } from "./types";

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
  onUpdate?: (job: JobSummary) => void;
}

export class JobFailedError extends Error {
  constructor(public job: JobSummary) {
    super(job.error ?? `job ${job.job_id} failed`);
  }
}

export async function pollJob(
  client: ApiClient,
  jobId: string,
  opts: PollOptions = {},
): Promise<JobSummary> {
  const interval = opts.intervalMs ?? 500;
  const deadline = Date.now() + (opts.timeoutMs ?? 10 * 60 * 1000);
  for (;;) {
    const job = await client.getJob(jobId);
    opts.onUpdate?.(job);
    if (job.state === "done") {
      return job;
    }
    if (job.state === "failed") {
      throw new JobFailedError(job);
    }
    if (Date.now() >= deadline) {
      throw new Error(`timed out waiting for job ${jobId}`);
    }
    await new Promise((resolve) => setTimeout(resolve, interval));
  }
}
