import { describe, expect, it } from 'vitest'

import type { SceneFrame, ServerFrame, TickStateFrame } from '../src/protocol.js'
import { applyFrame, initialViewState, normalizedEntropy } from '../src/state.js'

const scene: SceneFrame = {
  type: 'scene',
  v: 1,
  trial: 'abc',
  scene: {
    bounds: [-7, 7, -7, 7],
    goals: [[3, 3], [-3, 2]],
    obstacles: [[1, 0]],
    obstacle_side: 1,
    robot_radius: 0.3,
    goal_capture_radius: 0.5,
    indicated_goal: 0,
    scene_id: 4,
  },
  start: [0, 0],
}

function tick(t: number, x: number, y: number): TickStateFrame {
  return { type: 'tick-state', t, position: [x, y], action: [1, 0], inputs: t, budget: 100 }
}

describe('applyFrame', () => {
  it('scene frame resets the trial view', () => {
    let view = applyFrame(initialViewState(), { type: 'joined', v: 1, methods: ['direct'], input_budget: 42, tick_seconds: 0.1 })
    expect(view.budget).toBe(42)
    view = applyFrame(view, scene)
    expect(view.running).toBe(true)
    expect(view.trialId).toBe('abc')
    expect(view.trail).toEqual([[0, 0]])
    expect(view.budget).toBe(42) // survives the reset
  })

  it('pose mirrors the last tick-state, never extrapolated', () => {
    let view = applyFrame(initialViewState(), scene)
    view = applyFrame(view, tick(0, 0.3, 0))
    view = applyFrame(view, tick(1, 0.6, 0.1))
    expect(view.position).toEqual([0.6, 0.1])
    expect(view.trail).toEqual([[0, 0], [0.3, 0], [0.6, 0.1]])
    expect(view.tick).toBe(1)
    expect(view.inputs).toBe(1)
  })

  it('entropy frames accumulate and trial-result stops the run', () => {
    let view = applyFrame(initialViewState(), scene)
    const frames: ServerFrame[] = [
      { type: 'entropy', t: 0, lb: 1.0, ub: 2.0, mode_weights: [1] },
      { type: 'entropy', t: 1, lb: 0.5, ub: 1.5, mode_weights: [1] },
      { type: 'trial-result', outcome: 'goal', ticks: 2, inputs: 3, aborted: false },
    ]
    for (const f of frames) view = applyFrame(view, f)
    expect(view.entropy.map((p) => p.lb)).toEqual([1.0, 0.5])
    expect(view.running).toBe(false)
    expect(view.outcome?.outcome).toBe('goal')
  })

  it('error frames set the banner without touching the run', () => {
    let view = applyFrame(initialViewState(), scene)
    view = applyFrame(view, { type: 'error', message: 'nope' })
    expect(view.error).toBe('nope')
    expect(view.running).toBe(true)
  })
})

describe('normalizedEntropy', () => {
  it('min-max normalizes the lower bounds per trial', () => {
    const points = [
      { t: 0, lb: 2.0, ub: 3.0 },
      { t: 1, lb: 1.0, ub: 2.0 },
      { t: 2, lb: 3.0, ub: 4.0 },
    ]
    expect(normalizedEntropy(points)).toEqual([0.5, 0, 1])
  })

  it('flat series map to zero and empty stays empty', () => {
    expect(normalizedEntropy([{ t: 0, lb: 1, ub: 2 }, { t: 1, lb: 1, ub: 2 }])).toEqual([0, 0])
    expect(normalizedEntropy([])).toEqual([])
  })
})
