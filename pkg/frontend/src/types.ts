/** Wire types mirrored from the service API. */

export type IntervalClause = [number | null, number | null];
export interface CategoryClause {
  in: Array<string | number>;
}
export type Clause = IntervalClause | CategoryClause;
export type PredicateJson = Record<string, Clause>;

export interface LdaOverrides {
  K?: number;
  alpha_dir?: number;
  eta?: number;
  max_iters?: number;
  seed?: number;
}

export interface QueryRequest {
  dataset: string;
  predicate: PredicateJson;
  alpha?: number;
  algo?: "cgs" | "vb";
  lda?: LdaOverrides;
  materialize_result?: boolean;
  decay?: number;
}

export interface TopicWord {
  term: string;
  weight: number;
}

export interface TopicSummary {
  topic: number;
  words: TopicWord[];
}

export interface ScoredPlanJson {
  model_ids: string[];
  n_covered: number;
  n_uncovered: number;
  merge_count: number;
  l_p: number;
  c_t_train: number;
  c_t_merge: number;
  c_t_norm: number;
  sc: number;
  uncovered: PredicateJson[];
}

export interface PlanTraceJson {
  query: PredicateJson;
  alpha: number;
  algo: string;
  n_query: number;
  chosen: ScoredPlanJson;
  search: {
    method: string;
    plans_scored: number;
    th_trajectory: Array<number | null>;
    layers_visited: Record<string, number>;
    elapsed_s?: number;
  };
  candidates: string[];
  excluded_partial: string[];
  uncovered: PredicateJson[];
  timings: Record<string, number>;
  materialized_as?: string | null;
  warnings?: string[];
}

export interface JobSummary {
  job_id: string;
  kind: string;
  state: "queued" | "running" | "done" | "failed";
  result?: unknown;
  error?: string;
}

export interface DatasetInfo {
  name: string;
  n_docs: number;
  vocab_size: number;
  vocab_hash: string;
  attributes: Record<string, "int" | "float" | "category">;
}

export interface QueryResultJson {
  topics: TopicSummary[];
  merges?: number;
  plan: ScoredPlanJson;
}
