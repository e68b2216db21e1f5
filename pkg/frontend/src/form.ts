import type { FeedbackAction, FeedbackResult, Verdict } from "./api.js";

/** Verdict form state machine.
 *
 * Submission stays disabled until an action is chosen AND the rationale
 * has non-whitespace content; the service enforces the same rule, but it
 * must never be reachable from the UI in the first place.
 */
export interface FormState {
  action: FeedbackAction | null;
  rationale: string;
  submitting: boolean;
  /** Standing verdict returned by a conflict; shown instead of the form. */
  conflict: Verdict | null;
  error: string | null;
}

export function emptyForm(): FormState {
  return {
    action: null,
    rationale: "",
    submitting: false,
    conflict: null,
    error: null,
  };
}

export function canSubmit(s: FormState): boolean {
  return (
    !s.submitting &&
    s.conflict === null &&
    s.action !== null &&
    s.rationale.trim().length > 0
  );
}

export function setAction(s: FormState, action: FeedbackAction): FormState {
  return { ...s, action, error: null };
}

export function setRationale(s: FormState, rationale: string): FormState {
  return { ...s, rationale, error: null };
}

export function beginSubmit(s: FormState): FormState {
  return { ...s, submitting: true, error: null };
}

/** Fold the API outcome back into the form. A conflict pins the existing
 * verdict for display; a created verdict resets the form. */
export function applyResult(s: FormState, result: FeedbackResult): FormState {
  switch (result.kind) {
    case "created":
      return emptyForm();
    case "conflict":
      return { ...s, submitting: false, conflict: result.verdict };
    case "error":
      return { ...s, submitting: false, error: result.message };
  }
}
