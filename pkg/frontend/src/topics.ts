/** Topic rendering: ranked word bars, weights straight from the service. */

import type { TopicSummary } from "./types";

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

export function renderTopicBars(
  root: HTMLElement,
  topics: TopicSummary[],
  highlight: Set<string> = new Set(),
): void {
  const doc = root.ownerDocument;
  root.replaceChildren();
  for (const topic of topics) {
    const card = el(doc, "div", "topic-card");
    card.dataset.topic = String(topic.topic);
    card.appendChild(el(doc, "h3", "topic-title", `Topic ${topic.topic}`));
    const max = Math.max(...topic.words.map((w) => w.weight), 1e-12);
    for (const word of topic.words) {
      const row = el(doc, "div", "word-row");
      row.dataset.term = word.term;
      if (highlight.has(word.term)) {
        row.classList.add("shared-word");
      }
      row.appendChild(el(doc, "span", "word-term", word.term));
      const bar = el(doc, "div", "word-bar");
      bar.style.width = `${Math.round((word.weight / max) * 100)}%`;
      bar.title = word.weight.toExponential(3);
      row.appendChild(bar);
      row.appendChild(
        el(doc, "span", "word-weight", word.weight.toExponential(2)),
      );
      card.appendChild(row);
    }
    root.appendChild(card);
  }
}
