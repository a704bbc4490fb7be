import type { AnnotationRecord, Label, SessionState, SessionView } from "./types";

/** Client-side mirror of the service session state machine. The UI only ever
 * adopts a new state when the server reports it, and checks the transition
 * against this table (a violation means the UI and service disagree). */
const TRANSITIONS: Record<SessionState, SessionState[]> = {
  created: ["created", "awaiting_annotations"],
  awaiting_annotations: ["awaiting_annotations", "finetuning"],
  finetuning: ["finetuning", "ready", "failed"],
  ready: ["ready"],
  failed: ["failed"],
};

export function isValidTransition(prev: SessionState, next: SessionState): boolean {
  return TRANSITIONS[prev]?.includes(next) ?? false;
}

export function canAnnotate(state: SessionState): boolean {
  return state === "awaiting_annotations";
}

export function canCompare(state: SessionState): boolean {
  return state === "ready";
}

/** Latest label per clip per annotator, then majority (ties negative) —
 * mirrors the service merge so progress indicators agree with it. */
export function effectiveLabels(annotations: AnnotationRecord[]): Map<string, Label> {
  const perVideo = new Map<string, Map<string | null, AnnotationRecord>>();
  for (const ann of annotations) {
    const picks = perVideo.get(ann.video_id) ?? new Map();
    const prev = picks.get(ann.annotator);
    if (!prev || ann.timestamp >= prev.timestamp) {
      picks.set(ann.annotator, ann);
    }
    perVideo.set(ann.video_id, picks);
  }
  const merged = new Map<string, Label>();
  for (const [vid, picks] of perVideo) {
    const votes = [...picks.values()].map((a) => a.label);
    const positives = votes.filter((l) => l === "positive").length;
    merged.set(vid, positives > votes.length - positives ? "positive" : "negative");
  }
  return merged;
}

export function missingLabels(session: SessionView): string[] {
  const labeled = effectiveLabels(session.annotations);
  return session.selected_ids.filter((vid) => !labeled.has(vid));
}

/** Fine-tune unlocks only when the session is labelable-complete: correct
 * state and every selected clip labeled (server remains the authority). */
export function canStartFinetune(session: SessionView): boolean {
  return session.state === "awaiting_annotations" && missingLabels(session).length === 0;
}

/** At least one clip, and no more than the configured query budget. */
export function canCreateSession(pickedCount: number, targetCount = Infinity): boolean {
  return pickedCount >= 1 && pickedCount <= targetCount;
}
