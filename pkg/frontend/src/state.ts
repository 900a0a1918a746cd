// Client-side view of one live session. Server-authoritative: every
// field mirrors the last frame received; nothing is extrapolated
// locally between ticks.

import type { EntropyFrame, Method, SceneFrame, SceneJson, ServerFrame, TickStateFrame, TrialResultFrame } from './protocol.js'

export interface EntropyPoint {
  t: number
  lb: number
  ub: number
}

export interface ViewState {
  scene: SceneJson | null
  trialId: string | null
  method: Method
  position: [number, number]
  trail: [number, number][]
  entropy: EntropyPoint[]
  inputs: number
  budget: number
  tick: number
  outcome: TrialResultFrame | null
  running: boolean
  error: string | null
}

export function initialViewState(method: Method = 'direct'): ViewState {
  return {
    scene: null,
    trialId: null,
    method,
    position: [0, 0],
    trail: [],
    entropy: [],
    inputs: 0,
    budget: 100,
    tick: 0,
    outcome: null,
    running: false,
    error: null,
  }
}

/** Fold one server frame into the view. Pure: returns a new state. */
export function applyFrame(state: ViewState, frame: ServerFrame): ViewState {
  switch (frame.type) {
    case 'joined':
      return { ...state, budget: frame.input_budget }
    case 'method-selected':
      return { ...state, method: frame.method }
    case 'scene': {
      const f = frame as SceneFrame
      return {
        ...initialViewState(state.method),
        budget: state.budget,
        scene: f.scene,
        trialId: f.trial,
        position: [f.start[0], f.start[1]],
        trail: [[f.start[0], f.start[1]]],
        running: true,
      }
    }
    case 'tick-state': {
      const f = frame as TickStateFrame
      return {
        ...state,
        position: [f.position[0], f.position[1]],
        trail: [...state.trail, [f.position[0], f.position[1]]],
        inputs: f.inputs,
        budget: f.budget,
        tick: f.t,
      }
    }
    case 'entropy': {
      const f = frame as EntropyFrame
      return { ...state, entropy: [...state.entropy, { t: f.t, lb: f.lb, ub: f.ub }] }
    }
    case 'trial-result':
      return { ...state, outcome: frame, running: false }
    case 'error':
      return { ...state, error: frame.message }
  }
}

/**
 * Entropy lower bounds min-max normalized over the trial so far,
 * matching the strip-chart display convention. Flat series map to 0.
 */
export function normalizedEntropy(points: readonly EntropyPoint[]): number[] {
  if (points.length === 0) return []
  const lbs = points.map((p) => p.lb)
  const lo = Math.min(...lbs)
  const hi = Math.max(...lbs)
  const span = hi - lo
  if (span <= 0) return lbs.map(() => 0)
  return lbs.map((v) => (v - lo) / span)
}
