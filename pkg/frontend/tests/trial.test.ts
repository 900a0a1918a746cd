import { describe, expect, it } from 'vitest'

import type { Method, TrialResultFrame } from '../src/protocol.js'
import { TrialFlow } from '../src/trial.js'

const METHODS: Method[] = ['direct', 'ho-apf', 'intent']

function result(outcome: TrialResultFrame['outcome'], aborted = false): TrialResultFrame {
  return { type: 'trial-result', outcome, ticks: 50, inputs: 10, aborted }
}

describe('TrialFlow', () => {
  it('sequences three methods times twenty trials', () => {
    const flow = new TrialFlow(METHODS)
    const seen: string[] = []
    while (!flow.done) {
      seen.push(flow.current.method)
      flow.record(result('goal'))
    }
    expect(seen.length).toBe(60)
    expect(seen.slice(0, 20).every((m) => m === 'direct')).toBe(true)
    expect(seen.slice(20, 40).every((m) => m === 'ho-apf')).toBe(true)
    expect(seen.slice(40).every((m) => m === 'intent')).toBe(true)
    expect(() => flow.current).toThrow()
  })

  it('reuses the same seeds across methods', () => {
    const flow = new TrialFlow(METHODS, 2)
    const seeds: number[] = []
    while (!flow.done) {
      seeds.push(flow.current.seed)
      flow.record(result('goal'))
    }
    expect(seeds).toEqual([1, 2, 1, 2, 1, 2])
  })

  it('summaries aggregate outcomes per method', () => {
    const flow = new TrialFlow(['direct', 'intent'], 3)
    flow.record(result('goal'))
    flow.record(result('collision'))
    flow.record(result('timeout', true)) // aborted
    flow.record(result('goal'))
    flow.record(result('goal'))
    flow.record(result('timeout'))
    const [direct, intent] = flow.summaries()
    expect(direct).toMatchObject({ method: 'direct', trials: 3, successes: 1, collisions: 1, aborted: 1, timeouts: 0 })
    expect(intent).toMatchObject({ method: 'intent', trials: 3, successes: 2, timeouts: 1, aborted: 0 })
    expect(intent.meanTicks).toBeCloseTo(50)
  })

  it('rejects an empty method list', () => {
    expect(() => new TrialFlow([])).toThrow()
  })
})
