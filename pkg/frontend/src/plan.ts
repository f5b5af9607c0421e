/** Plan-trace rendering: reused models as shaded sub-regions, the trained
 * fragment highlighted, and the score breakdown as a stacked bar. */

import type { PlanTraceJson, PredicateJson } from "./types";

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

interface Span {
  lo: number;
  hi: number;
}

function firstInterval(pred: PredicateJson): Span | null {
  for (const clause of Object.values(pred)) {
    if (Array.isArray(clause)) {
      const [lo, hi] = clause;
      if (lo !== null && hi !== null) {
        return { lo, hi };
      }
    }
  }
  return null;
}

/** Lay query sub-regions out on one axis as percentage offsets. */
export function regionLayout(
  query: PredicateJson,
  regions: PredicateJson[],
): Array<{ left: number; width: number }> {
  const q = firstInterval(query);
  if (!q || q.hi <= q.lo) {
    return regions.map(() => ({ left: 0, width: 100 }));
  }
  const span = q.hi - q.lo;
  return regions.map((r) => {
    const iv = firstInterval(r);
    if (!iv) return { left: 0, width: 100 };
    const left = ((Math.max(iv.lo, q.lo) - q.lo) / span) * 100;
    const right = ((Math.min(iv.hi, q.hi) - q.lo) / span) * 100;
    return { left, width: Math.max(right - left, 0) };
  });
}

export interface PlanPanelModel {
  modelIds: string[];
  trainedFragments: number;
  method: string;
}

export function renderPlanPanel(
  root: HTMLElement,
  trace: PlanTraceJson,
  modelRegions: Record<string, PredicateJson> = {},
): PlanPanelModel {
  const doc = root.ownerDocument;
  root.replaceChildren();

  const strip = el(doc, "div", "region-strip");
  strip.dataset.role = "coverage";
  const reused = trace.chosen.model_ids;
  const reusedRegions = reused
    .map((id) => modelRegions[id])
    .filter((r): r is PredicateJson => r !== undefined);
  for (const [i, layout] of regionLayout(trace.query, reusedRegions).entries()) {
    const block = el(doc, "div", "region reused-model");
    block.dataset.modelId = reused[i];
    block.style.left = `${layout.left}%`;
    block.style.width = `${layout.width}%`;
    block.title = reused[i];
    strip.appendChild(block);
  }
  for (const layout of regionLayout(trace.query, trace.uncovered)) {
    const block = el(doc, "div", "region trained-fragment");
    block.style.left = `${layout.left}%`;
    block.style.width = `${layout.width}%`;
    block.title = "trained fresh";
    strip.appendChild(block);
  }
  root.appendChild(strip);

  const ids = el(doc, "div", "plan-models");
  ids.dataset.role = "plan-models";
  ids.textContent = reused.length
    ? `reused: ${reused.join(", ")}`
    : "trained from scratch";
  root.appendChild(ids);

  const chosen = trace.chosen;
  const alpha = trace.alpha;
  const lossPart = alpha * chosen.l_p;
  const costPart = (1 - alpha) * chosen.c_t_norm;
  const total = Math.max(lossPart + costPart, 1e-12);
  const bar = el(doc, "div", "score-bar");
  bar.dataset.role = "score-breakdown";
  const lossSeg = el(doc, "div", "score-loss");
  lossSeg.style.width = `${(lossPart / total) * 100}%`;
  lossSeg.title = `quality loss ${chosen.l_p.toFixed(4)}`;
  const costSeg = el(doc, "div", "score-cost");
  costSeg.style.width = `${(costPart / total) * 100}%`;
  costSeg.title = `normalized time ${chosen.c_t_norm.toFixed(4)}`;
  bar.append(lossSeg, costSeg);
  root.appendChild(bar);

  const meta = el(
    doc,
    "div",
    "plan-meta",
    `sc=${chosen.sc.toExponential(3)} merges=${chosen.merge_count} ` +
      `covered=${chosen.n_covered}/${trace.n_query} ` +
      `search=${trace.search.method} (${trace.search.plans_scored} plans)`,
  );
  root.appendChild(meta);

  if (trace.excluded_partial.length) {
    root.appendChild(
      el(
        doc,
        "div",
        "plan-exclusions",
        `excluded (partial overlap): ${trace.excluded_partial.join(", ")}`,
      ),
    );
  }
  return {
    modelIds: [...reused],
    trainedFragments: trace.uncovered.length,
    method: trace.search.method,
  };
}
