import type { EmotionBadge } from './types.js';

export function formatPercent(probability: number): string {
  return `${Math.round(probability * 100)}%`;
}

export function badgeLabel(badge: EmotionBadge): string {
  return `${badge.name} ${formatPercent(badge.probability)}`;
}

export interface RankedEmotion {
  name: string;
  probability: number;
}

/** Top-k emotions by probability, descending; ties break by name. */
export function topEmotions(
  distribution: Record<string, number>,
  k = 5,
): RankedEmotion[] {
  return Object.entries(distribution)
    .map(([name, probability]) => ({ name, probability }))
    .sort((a, b) => b.probability - a.probability || a.name.localeCompare(b.name))
    .slice(0, k);
}

/** Renders the badge (name + rounded percentage, top-5 detail as title). */
export function createBadge(badge: EmotionBadge): HTMLSpanElement {
  const el = document.createElement('span');
  el.className = 'emotion-badge';
  el.textContent = badgeLabel(badge);
  if (badge.distribution) {
    el.title = topEmotions(badge.distribution)
      .map((e) => `${e.name} ${formatPercent(e.probability)}`)
      .join('\n');
  }
  return el;
}
