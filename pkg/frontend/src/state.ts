/** Pure editor-state transitions. Splice and undo are exact string
 * operations, so history replay always reconstructs the current text from
 * the original. */

import type { Candidate } from './api.js';

export interface AcceptedInterpolation {
  offset: number;
  simile: string;
}

export interface EditorState {
  originalText: string;
  text: string;
  /** probability per gap 0..text.length, or null before/again-after edits */
  gapProbabilities: number[] | null;
  selectedGap: number | null;
  candidates: Candidate[];
  history: AcceptedInterpolation[];
}

export class MalformedResponseError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'MalformedResponseError';
  }
}

export function initialState(text: string): EditorState {
  return {
    originalText: text,
    text,
    gapProbabilities: null,
    selectedGap: null,
    candidates: [],
    history: [],
  };
}

export function spliceAt(text: string, offset: number, simile: string): string {
  if (offset < 0 || offset > text.length) {
    throw new RangeError(`offset ${offset} outside [0, ${text.length}]`);
  }
  return text.slice(0, offset) + simile + text.slice(offset);
}

export function replayHistory(original: string, history: AcceptedInterpolation[]): string {
  let text = original;
  for (const step of history) {
    text = spliceAt(text, step.offset, step.simile);
  }
  return text;
}

/** Validate and store a locate result: one probability per gap, all within
 * [0, 1], summing to 1 within display rounding. */
export function withLocateResult(state: EditorState, positions: Array<{ index: number; probability: number }>): EditorState {
  if (!Array.isArray(positions) || positions.length !== state.text.length + 1) {
    throw new MalformedResponseError(
      `expected ${state.text.length + 1} gap probabilities, got ${positions?.length ?? 'none'}`,
    );
  }
  const probs = new Array<number>(positions.length).fill(NaN);
  let sum = 0;
  for (const entry of positions) {
    if (
      typeof entry?.index !== 'number' ||
      typeof entry?.probability !== 'number' ||
      entry.index < 0 ||
      entry.index >= probs.length ||
      entry.probability < 0 ||
      entry.probability > 1
    ) {
      throw new MalformedResponseError('gap entry out of range');
    }
    probs[entry.index] = entry.probability;
    sum += entry.probability;
  }
  if (probs.some(Number.isNaN) || Math.abs(sum - 1) > 1e-3) {
    throw new MalformedResponseError(`gap probabilities sum to ${sum.toFixed(4)}`);
  }
  return { ...state, gapProbabilities: probs };
}

export function selectGap(state: EditorState, gap: number): EditorState {
  if (gap < 0 || gap > state.text.length) {
    throw new RangeError(`gap ${gap} outside [0, ${state.text.length}]`);
  }
  return { ...state, selectedGap: gap, candidates: [] };
}

export function withCandidates(state: EditorState, candidates: Candidate[]): EditorState {
  return { ...state, candidates: [...candidates] };
}

/** Splice the chosen candidate at the selected gap. Clears the candidate
 * list and the now-stale gap probabilities; appends to history. */
export function acceptCandidate(state: EditorState, index: number): EditorState {
  if (state.selectedGap === null) {
    throw new Error('no gap selected');
  }
  const candidate = state.candidates[index];
  if (candidate === undefined) {
    throw new RangeError(`no candidate at index ${index}`);
  }
  const offset = state.selectedGap;
  return {
    ...state,
    text: spliceAt(state.text, offset, candidate.simile),
    gapProbabilities: null,
    selectedGap: null,
    candidates: [],
    history: [...state.history, { offset, simile: candidate.simile }],
  };
}

/** Remove the most recent interpolation, restoring the exact prior text. */
export function undoLast(state: EditorState): EditorState {
  if (state.history.length === 0) {
    return state;
  }
  const last = state.history[state.history.length - 1];
  const removed = state.text.slice(last.offset, last.offset + last.simile.length);
  if (removed !== last.simile) {
    throw new Error('history does not match current text');
  }
  return {
    ...state,
    text: state.text.slice(0, last.offset) + state.text.slice(last.offset + last.simile.length),
    gapProbabilities: null,
    selectedGap: null,
    candidates: [],
    history: state.history.slice(0, -1),
  };
}
