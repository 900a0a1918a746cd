// Wire protocol shared with the session service: JSON frames over a
// websocket, plus the 4-key bitmask encoding of 8-direction input.

export const WIRE_VERSION = 1

export const KEY_UP = 1
export const KEY_DOWN = 2
export const KEY_LEFT = 4
export const KEY_RIGHT = 8

export type Method = 'direct' | 'ho-apf' | 'intent'

export interface SceneJson {
  bounds: [number, number, number, number] // xmin, xmax, ymin, ymax
  goals: [number, number][]
  obstacles: [number, number][]
  obstacle_side: number
  robot_radius: number
  goal_capture_radius: number
  indicated_goal: number
  scene_id: number
}

export interface JoinedFrame {
  type: 'joined'
  v: number
  methods: Method[]
  input_budget: number
  tick_seconds: number
}

export interface SceneFrame {
  type: 'scene'
  v: number
  trial: string
  scene: SceneJson
  start: [number, number]
}

export interface TickStateFrame {
  type: 'tick-state'
  t: number
  position: [number, number]
  action: [number, number]
  inputs: number
  budget: number
}

export interface EntropyFrame {
  type: 'entropy'
  t: number
  lb: number
  ub: number
  mode_weights: number[]
}

export interface TrialResultFrame {
  type: 'trial-result'
  outcome: 'goal' | 'collision' | 'timeout'
  ticks: number
  inputs: number
  aborted: boolean
}

export interface ErrorFrame {
  type: 'error'
  message: string
}

export interface MethodSelectedFrame {
  type: 'method-selected'
  method: Method
}

export type ServerFrame =
  | JoinedFrame
  | SceneFrame
  | TickStateFrame
  | EntropyFrame
  | TrialResultFrame
  | ErrorFrame
  | MethodSelectedFrame

export type ClientFrame =
  | { type: 'join' }
  | { type: 'select-method'; method: Method }
  | { type: 'key-state'; mask: number }
  | { type: 'start-trial'; seed: number }
  | { type: 'abort' }

/** Map the set of held arrow keys to the wire bitmask. */
export function maskFromKeys(held: ReadonlySet<string>): number {
  let mask = 0
  if (held.has('ArrowUp') || held.has('KeyW')) mask |= KEY_UP
  if (held.has('ArrowDown') || held.has('KeyS')) mask |= KEY_DOWN
  if (held.has('ArrowLeft') || held.has('KeyA')) mask |= KEY_LEFT
  if (held.has('ArrowRight') || held.has('KeyD')) mask |= KEY_RIGHT
  return mask
}

/** Newly pressed keys between two bitmask samples (the budget currency). */
export function countKeyDowns(prev: number, mask: number): number {
  let fresh = mask & ~prev
  let n = 0
  while (fresh) {
    n += fresh & 1
    fresh >>= 1
  }
  return n
}

/** The unit command direction a bitmask encodes, [0, 0] when cancelled. */
export function maskDirection(mask: number): [number, number] {
  const dx = (mask & KEY_RIGHT ? 1 : 0) - (mask & KEY_LEFT ? 1 : 0)
  const dy = (mask & KEY_UP ? 1 : 0) - (mask & KEY_DOWN ? 1 : 0)
  if (dx === 0 && dy === 0) return [0, 0]
  const norm = Math.hypot(dx, dy)
  return [dx / norm, dy / norm]
}

export function parseServerFrame(raw: string): ServerFrame {
  const frame = JSON.parse(raw) as ServerFrame
  if (typeof frame !== 'object' || frame === null || typeof frame.type !== 'string') {
    throw new Error('malformed server frame')
  }
  return frame
}
