/** Predicate builders: every UI selection becomes schema-valid JSON. */

import type { PredicateJson } from "./types";

export interface RangeSelection {
  attr: string;
  lo: number | null;
  hi: number | null;
}

export interface RectangleSelection {
  xAttr: string;
  yAttr: string;
  x0: number;
  x1: number;
  y0: number;
  y1: number;
}

export interface CategorySelection {
  attr: string;
  values: Array<string | number>;
}

export class EmptySelectionError extends Error {}

/** One half-open interval clause from a slider pair. */
export function rangePredicate(sel: RangeSelection): PredicateJson {
  if (sel.lo !== null && sel.hi !== null && sel.lo >= sel.hi) {
    throw new EmptySelectionError(
      `empty range for ${sel.attr}: [${sel.lo}, ${sel.hi})`,
    );
  }
  return { [sel.attr]: [sel.lo, sel.hi] };
}

/** Two interval clauses from a dragged rectangle over a scatter view. */
export function rectanglePredicate(sel: RectangleSelection): PredicateJson {
  const [xLo, xHi] = [Math.min(sel.x0, sel.x1), Math.max(sel.x0, sel.x1)];
  const [yLo, yHi] = [Math.min(sel.y0, sel.y1), Math.max(sel.y0, sel.y1)];
  if (xLo === xHi || yLo === yHi) {
    throw new EmptySelectionError("rectangle has zero area");
  }
  return {
    [sel.xAttr]: [xLo, xHi],
    [sel.yAttr]: [yLo, yHi],
  };
}

export function categoryPredicate(sel: CategorySelection): PredicateJson {
  if (sel.values.length === 0) {
    throw new EmptySelectionError(`no categories picked for ${sel.attr}`);
  }
  return { [sel.attr]: { in: [...sel.values].sort() } };
}

/** Conjunction of clause groups; later groups may not redefine an attribute. */
export function combinePredicates(...parts: PredicateJson[]): PredicateJson {
  const out: PredicateJson = {};
  for (const part of parts) {
    for (const [attr, clause] of Object.entries(part)) {
      if (attr in out) {
        throw new Error(`attribute ${attr} constrained twice`);
      }
      out[attr] = clause;
    }
  }
  return out;
}
