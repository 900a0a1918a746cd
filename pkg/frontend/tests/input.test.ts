import { describe, expect, it } from 'vitest'

import { InputTracker } from '../src/input.js'
import { KEY_RIGHT, KEY_UP } from '../src/protocol.js'

describe('InputTracker', () => {
  it('tracks held keys into a bitmask and counts key-downs', () => {
    const tracker = new InputTracker(100)
    expect(tracker.keyDown('ArrowUp')?.mask).toBe(KEY_UP)
    expect(tracker.keyDown('ArrowRight')?.mask).toBe(KEY_UP | KEY_RIGHT)
    expect(tracker.snapshot().keyDowns).toBe(2)
    expect(tracker.keyUp('ArrowUp')?.mask).toBe(KEY_RIGHT)
    expect(tracker.snapshot().keyDowns).toBe(2) // releases are free
  })

  it('ignores auto-repeat and unknown keys', () => {
    const tracker = new InputTracker(100)
    tracker.keyDown('ArrowUp')
    expect(tracker.keyDown('ArrowUp')).toBeNull()
    expect(tracker.keyDown('Escape')).toBeNull() // no mask change
    expect(tracker.snapshot().keyDowns).toBe(1)
  })

  it('locks input at the budget', () => {
    const tracker = new InputTracker(3)
    tracker.keyDown('ArrowUp')
    tracker.keyUp('ArrowUp')
    tracker.keyDown('ArrowLeft')
    tracker.keyUp('ArrowLeft')
    expect(tracker.locked).toBe(false)
    const snap = tracker.keyDown('ArrowDown')
    expect(snap?.locked).toBe(true)
    expect(snap?.mask).toBe(0) // locked input sends a zero mask
    tracker.keyUp('ArrowDown')
    expect(tracker.keyDown('ArrowRight')?.mask ?? 0).toBe(0)
    expect(tracker.snapshot().keyDowns).toBe(3) // frozen at the budget
  })

  it('reset clears state and can change the budget', () => {
    const tracker = new InputTracker(1)
    tracker.keyDown('ArrowUp')
    expect(tracker.locked).toBe(true)
    tracker.reset(2)
    expect(tracker.locked).toBe(false)
    expect(tracker.snapshot().mask).toBe(0)
    expect(tracker.keyDown('ArrowUp')?.mask).toBe(KEY_UP)
  })
})
