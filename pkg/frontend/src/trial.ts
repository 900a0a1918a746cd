// Round orchestration: three methods, a fixed number of trials each,
// run back to back. The server owns trial ids and outcomes; this module
// owns only the sequencing and the summary table.

import type { Method, TrialResultFrame } from './protocol.js'

export const TRIALS_PER_ROUND = 20

export interface TrialOutcome {
  method: Method
  trial: number // 0-based within the round
  outcome: TrialResultFrame['outcome']
  ticks: number
  inputs: number
  aborted: boolean
}

export interface RoundSummary {
  method: Method
  trials: number
  successes: number
  collisions: number
  timeouts: number
  aborted: number
  meanTicks: number
  meanInputs: number
}

export class TrialFlow {
  readonly outcomes: TrialOutcome[] = []
  private cursor = 0

  constructor(
    readonly methods: readonly Method[],
    readonly trialsPerRound: number = TRIALS_PER_ROUND,
  ) {
    if (methods.length === 0) throw new Error('no methods to sequence')
  }

  get done(): boolean {
    return this.cursor >= this.methods.length * this.trialsPerRound
  }

  /** Method and within-round index of the next trial to run. */
  get current(): { method: Method; trial: number; seed: number } {
    if (this.done) throw new Error('round sequence exhausted')
    const round = Math.floor(this.cursor / this.trialsPerRound)
    const trial = this.cursor % this.trialsPerRound
    // same seeds across methods: every method sees the same scenes
    return { method: this.methods[round], trial, seed: trial + 1 }
  }

  record(result: TrialResultFrame): TrialOutcome {
    const { method, trial } = this.current
    const outcome: TrialOutcome = {
      method,
      trial,
      outcome: result.outcome,
      ticks: result.ticks,
      inputs: result.inputs,
      aborted: result.aborted,
    }
    this.outcomes.push(outcome)
    this.cursor += 1
    return outcome
  }

  summaries(): RoundSummary[] {
    return this.methods.map((method) => {
      const rows = this.outcomes.filter((o) => o.method === method)
      const n = rows.length
      const mean = (f: (o: TrialOutcome) => number) =>
        n === 0 ? 0 : rows.reduce((acc, o) => acc + f(o), 0) / n
      return {
        method,
        trials: n,
        successes: rows.filter((o) => o.outcome === 'goal' && !o.aborted).length,
        collisions: rows.filter((o) => o.outcome === 'collision').length,
        timeouts: rows.filter((o) => o.outcome === 'timeout' && !o.aborted).length,
        aborted: rows.filter((o) => o.aborted).length,
        meanTicks: mean((o) => o.ticks),
        meanInputs: mean((o) => o.inputs),
      }
    })
  }
}
