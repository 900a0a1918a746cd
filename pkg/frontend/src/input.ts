// Keyboard capture: held arrow/WASD keys become a 4-bit mask, sent on
// every change and on a heartbeat. Key-down events are counted locally
// against the input budget; at the limit input locks (zero mask) for
// the rest of the trial.

import { countKeyDowns, maskFromKeys } from './protocol.js'

export interface InputSnapshot {
  mask: number
  keyDowns: number
  locked: boolean
}

export class InputTracker {
  private held = new Set<string>()
  private lastMask = 0
  private downs = 0

  constructor(private budget: number) {}

  reset(budget?: number): void {
    if (budget !== undefined) this.budget = budget
    this.held.clear()
    this.lastMask = 0
    this.downs = 0
  }

  get locked(): boolean {
    return this.downs >= this.budget
  }

  /** Returns the new snapshot if the effective mask changed, else null. */
  keyDown(code: string): InputSnapshot | null {
    if (this.held.has(code)) return null // auto-repeat
    this.held.add(code)
    return this.refresh()
  }

  keyUp(code: string): InputSnapshot | null {
    if (!this.held.delete(code)) return null
    return this.refresh()
  }

  snapshot(): InputSnapshot {
    return { mask: this.locked ? 0 : this.lastMask, keyDowns: this.downs, locked: this.locked }
  }

  private refresh(): InputSnapshot | null {
    const mask = maskFromKeys(this.held)
    if (mask === this.lastMask) return null
    if (!this.locked) {
      this.downs += countKeyDowns(this.lastMask, mask)
    }
    this.lastMask = mask
    return this.snapshot()
  }
}
