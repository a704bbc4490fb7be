import type { ApiClient } from "./api";
import type { JobView } from "./types";

/** Poll a fine-tune job until it leaves the running state. Resolves with the
 * completed job, rejects on failure or timeout. */
export function pollJob(
  api: ApiClient,
  jobId: string,
  onUpdate?: (job: JobView) => void,
  intervalMs = 500,
  timeoutMs = 120_000,
): Promise<JobView> {
  const deadline = Date.now() + timeoutMs;
  return new Promise((resolve, reject) => {
    const timer = setInterval(async () => {
      try {
        const job = await api.getJob(jobId);
        onUpdate?.(job);
        if (job.status === "completed") {
          clearInterval(timer);
          resolve(job);
        } else if (job.status === "failed") {
          clearInterval(timer);
          reject(new Error(job.error ?? "fine-tune job failed"));
        } else if (Date.now() > deadline) {
          clearInterval(timer);
          reject(new Error(`job ${jobId} still running after ${timeoutMs}ms`));
        }
      } catch (err) {
        clearInterval(timer);
        reject(err);
      }
    }, intervalMs);
  });
}
