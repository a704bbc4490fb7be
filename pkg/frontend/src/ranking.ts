import type { RetrievalItem } from "./types";

/** Rank movement of one clip between the pretrained and fine-tuned lists. */
export interface RankChange {
  item: RetrievalItem;
  /** positive = moved up, negative = moved down, null = not in the other list. */
  delta: number | null;
}

/** Annotate the fine-tuned ranking with movement relative to the pretrained
 * one. The returned array preserves the response order exactly; this module
 * never re-sorts what the service returned. */
export function diffRankings(
  pretrained: RetrievalItem[],
  finetuned: RetrievalItem[],
): RankChange[] {
  const preRank = new Map(pretrained.map((item) => [item.id, item.rank]));
  return finetuned.map((item) => {
    const before = preRank.get(item.id);
    return { item, delta: before === undefined ? null : before - item.rank };
  });
}

export function movementBadge(delta: number | null): string {
  if (delta === null) return "new";
  if (delta > 0) return `↑${delta}`;
  if (delta < 0) return `↓${-delta}`;
  return "=";
}

/** True when ranks in a response are the contiguous sequence 1..n — a cheap
 * contract check applied before rendering. */
export function ranksAreContiguous(items: RetrievalItem[]): boolean {
  return items.every((item, idx) => item.rank === idx + 1);
}
