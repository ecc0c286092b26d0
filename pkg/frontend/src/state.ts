// Console session state and its transitions.
//
// Invariants: at most one pending prompt (later gestures queue while a
// segmentation request is in flight); the ranking shown always belongs to
// the selected query segment; only aliases are ever displayed for enrolled
// marks from other ballots.

import type { Prompt, RankedMatch, SegmentResponse } from './api'
import type { GesturePoint } from './prompts'

export interface SegmentInfo {
  segmentId: string
  bbox: [number, number, number, number]
  rleMask: string
  alias: string | null
}

export interface InlineHint {
  at: GesturePoint
  text: string
}

export interface ConsoleState {
  ballotId: string | null
  segments: SegmentInfo[]
  pendingPrompt: Prompt | null
  promptQueue: Prompt[]
  selectedSegmentId: string | null
  ranking: RankedMatch[] | null
  rankingFor: string | null
  excludeSameBallot: boolean
  banner: string | null
  hint: InlineHint | null
}

export function initialState(): ConsoleState {
  return {
    ballotId: null,
    segments: [],
    pendingPrompt: null,
    promptQueue: [],
    selectedSegmentId: null,
    ranking: null,
    rankingFor: null,
    excludeSameBallot: false,
    banner: null,
    hint: null,
  }
}

export function ballotUploaded(state: ConsoleState, ballotId: string): ConsoleState {
  return { ...initialState(), excludeSameBallot: state.excludeSameBallot, ballotId }
}

// A gesture becomes the pending prompt, or queues if one is in flight.
export function promptRequested(state: ConsoleState, prompt: Prompt): ConsoleState {
  if (state.pendingPrompt !== null) {
    return { ...state, promptQueue: [...state.promptQueue, prompt] }
  }
  return { ...state, pendingPrompt: prompt, hint: null }
}

function shiftQueue(state: ConsoleState): Pick<ConsoleState, 'pendingPrompt' | 'promptQueue'> {
  if (state.promptQueue.length === 0) return { pendingPrompt: null, promptQueue: [] }
  const [next, ...rest] = state.promptQueue
  return { pendingPrompt: next, promptQueue: rest }
}

export function promptSucceeded(state: ConsoleState, response: SegmentResponse): ConsoleState {
  const segment: SegmentInfo = {
    segmentId: response.segment_id,
    bbox: response.bbox,
    rleMask: response.rle_mask,
    alias: null,
  }
  return { ...state, ...shiftQueue(state), segments: [...state.segments, segment], hint: null }
}

// 422: nothing under the prompt; show the hint at the prompt location.
export function promptFoundNothing(state: ConsoleState, at: GesturePoint): ConsoleState {
  return { ...state, ...shiftQueue(state), hint: { at, text: 'no mark found here' } }
}

// Network failures never wipe the session; they surface as a banner.
export function requestFailed(state: ConsoleState, message: string): ConsoleState {
  return { ...state, ...shiftQueue(state), banner: message }
}

export function bannerDismissed(state: ConsoleState): ConsoleState {
  return { ...state, banner: null }
}

export function segmentEnrolled(state: ConsoleState, segmentId: string, alias: string): ConsoleState {
  return {
    ...state,
    segments: state.segments.map((s) => (s.segmentId === segmentId ? { ...s, alias } : s)),
  }
}

export function querySelected(state: ConsoleState, segmentId: string): ConsoleState {
  if (state.selectedSegmentId === segmentId) return state
  // ranking belongs to the previous selection; drop it
  return { ...state, selectedSegmentId: segmentId, ranking: null, rankingFor: null }
}

export function rankingReceived(
  state: ConsoleState,
  segmentId: string,
  matches: RankedMatch[],
): ConsoleState {
  if (state.selectedSegmentId !== segmentId) return state // stale response
  return { ...state, ranking: matches, rankingFor: segmentId }
}

export function exclusionToggled(state: ConsoleState, value: boolean): ConsoleState {
  return { ...state, excludeSameBallot: value }
}
