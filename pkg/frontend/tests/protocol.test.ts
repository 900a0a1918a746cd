import { describe, expect, it } from 'vitest'

import {
  KEY_DOWN,
  KEY_LEFT,
  KEY_RIGHT,
  KEY_UP,
  countKeyDowns,
  maskDirection,
  maskFromKeys,
  parseServerFrame,
} from '../src/protocol.js'

describe('maskFromKeys', () => {
  it('maps arrows and WASD to bits', () => {
    expect(maskFromKeys(new Set(['ArrowUp']))).toBe(KEY_UP)
    expect(maskFromKeys(new Set(['KeyW']))).toBe(KEY_UP)
    expect(maskFromKeys(new Set(['ArrowDown', 'KeyA']))).toBe(KEY_DOWN | KEY_LEFT)
    expect(maskFromKeys(new Set())).toBe(0)
    expect(maskFromKeys(new Set(['Space']))).toBe(0)
  })

  it('up+right encodes the diagonal bitmask', () => {
    expect(maskFromKeys(new Set(['ArrowUp', 'ArrowRight']))).toBe(KEY_UP | KEY_RIGHT)
  })
})

describe('maskDirection', () => {
  it('diagonals are unit vectors at 45 degrees', () => {
    const [dx, dy] = maskDirection(KEY_UP | KEY_RIGHT)
    expect(dx).toBeCloseTo(Math.SQRT1_2, 12)
    expect(dy).toBeCloseTo(Math.SQRT1_2, 12)
    expect(Math.atan2(dy, dx)).toBeCloseTo(Math.PI / 4, 12)
  })

  it('opposing keys cancel to a zero command', () => {
    expect(maskDirection(KEY_UP | KEY_DOWN)).toEqual([0, 0])
    expect(maskDirection(KEY_LEFT | KEY_RIGHT | KEY_UP | KEY_DOWN)).toEqual([0, 0])
    expect(maskDirection(0)).toEqual([0, 0])
  })

  it('cardinals are axis-aligned', () => {
    expect(maskDirection(KEY_LEFT)).toEqual([-1, 0])
    expect(maskDirection(KEY_DOWN)).toEqual([0, -1])
  })
})

describe('countKeyDowns', () => {
  it('counts only newly pressed bits', () => {
    expect(countKeyDowns(0, KEY_UP)).toBe(1)
    expect(countKeyDowns(KEY_UP, KEY_UP)).toBe(0)
    expect(countKeyDowns(KEY_UP, KEY_UP | KEY_RIGHT)).toBe(1)
    expect(countKeyDowns(KEY_UP, 0)).toBe(0)
    expect(countKeyDowns(0, 15)).toBe(4)
  })
})

describe('parseServerFrame', () => {
  it('accepts typed frames and rejects junk', () => {
    expect(parseServerFrame('{"type":"entropy","t":0,"lb":1,"ub":2,"mode_weights":[]}').type).toBe('entropy')
    expect(() => parseServerFrame('42')).toThrow()
    expect(() => parseServerFrame('{}')).toThrow()
  })
})
