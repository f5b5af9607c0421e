/** Exploration history: append-only per session, with pinned comparisons. */

import type { PredicateJson, TopicSummary } from "./types";

export interface HistoryEntry {
  predicate: PredicateJson;
  alpha: number;
  jobId: string;
  topics: TopicSummary[];
  label: string;
}

export class ExplorationSession {
  readonly dataset: string;
  private entries: HistoryEntry[] = [];
  private pins = new Set<number>();

  constructor(dataset: string) {
    this.dataset = dataset;
  }

  get history(): readonly HistoryEntry[] {
    return this.entries;
  }

  record(entry: Omit<HistoryEntry, "label">): HistoryEntry {
    const labeled = { ...entry, label: `#${this.entries.length + 1}` };
    this.entries.push(labeled);
    return labeled;
  }

  pin(index: number): void {
    if (index < 0 || index >= this.entries.length) {
      throw new RangeError(`no history entry ${index}`);
    }
    this.pins.add(index);
  }

  unpin(index: number): void {
    this.pins.delete(index);
  }

  get pinned(): HistoryEntry[] {
    return [...this.pins].sort((a, b) => a - b).map((i) => this.entries[i]);
  }
}
