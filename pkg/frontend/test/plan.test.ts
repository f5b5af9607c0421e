// @vitest-environment jsdom
import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { regionLayout, renderPlanPanel } from "../src/plan";
import type { PlanTraceJson, TopicSummary } from "../src/types";

interface Fixture {
  trace: PlanTraceJson;
  topics: TopicSummary[];
}

function fixture(name: string): Fixture {
  return JSON.parse(
    readFileSync(join(process.cwd(), "test", "fixtures", `${name}.json`), "utf-8"),
  );
}

const alpha0 = fixture("query_alpha0");
const alpha1 = fixture("query_alpha1");

describe("plan panel on the prepared-catalog fixtures", () => {
  it("weight 0 and weight 1 render two distinct plans", () => {
    const root0 = document.createElement("div");
    const root1 = document.createElement("div");
    const shown0 = renderPlanPanel(root0, alpha0.trace);
    const shown1 = renderPlanPanel(root1, alpha1.trace);
    expect(shown0.modelIds).not.toEqual(shown1.modelIds);
    expect(shown0.modelIds.length).toBeGreaterThan(0);
    expect(shown1.modelIds).toEqual([]);
    expect(root0.querySelector('[data-role="plan-models"]')!.textContent)
      .toContain("reused:");
    expect(root1.querySelector('[data-role="plan-models"]')!.textContent)
      .toContain("scratch");
  });

  it("trained fragments are highlighted for the scratch plan", () => {
    const root = document.createElement("div");
    renderPlanPanel(root, alpha1.trace);
    expect(root.querySelectorAll(".trained-fragment").length).toBe(
      alpha1.trace.uncovered.length,
    );
    expect(alpha1.trace.uncovered.length).toBeGreaterThan(0);
  });

  it("score breakdown bar is present with both segments", () => {
    const root = document.createElement("div");
    renderPlanPanel(root, alpha0.trace);
    const bar = root.querySelector('[data-role="score-breakdown"]')!;
    expect(bar.querySelector(".score-loss")).not.toBeNull();
    expect(bar.querySelector(".score-cost")).not.toBeNull();
  });

  it("exclusions surface in the panel when present", () => {
    const trace = structuredClone(alpha0.trace);
    trace.excluded_partial = ["m000099"];
    const root = document.createElement("div");
    renderPlanPanel(root, trace);
    expect(root.querySelector(".plan-exclusions")!.textContent).toContain(
      "m000099",
    );
  });
});

describe("region layout", () => {
  it("maps sub-regions to percentage offsets", () => {
    const layout = regionLayout({ id: [0, 100] }, [
      { id: [0, 25] },
      { id: [50, 100] },
    ]);
    expect(layout[0]).toEqual({ left: 0, width: 25 });
    expect(layout[1]).toEqual({ left: 50, width: 50 });
  });

  it("clips regions to the query span", () => {
    const [layout] = regionLayout({ id: [0, 10] }, [{ id: [5, 50] }]);
    expect(layout.left).toBe(50);
    expect(layout.width).toBe(50);
  });
});
