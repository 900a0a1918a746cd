// Canvas rendering. Conventions: the indicated goal is a solid green
// box, distractor goals are dashed white boxes, obstacles are pink
// boxes; the robot trail is tinted per method. A strip chart below the
// workspace shows the per-trial normalized entropy lower bound.

import type { Method, SceneJson } from './protocol.js'
import { normalizedEntropy, type ViewState } from './state.js'

export const METHOD_COLORS: Record<Method, string> = {
  direct: '#e0a020',
  'ho-apf': '#40a0e0',
  intent: '#40e080',
}

export interface Transform {
  toX(wx: number): number
  toY(wy: number): number
  scale: number
}

/** World-to-canvas transform fitting the scene bounds with a margin. */
export function makeTransform(
  bounds: [number, number, number, number],
  width: number,
  height: number,
  margin = 20,
): Transform {
  const [xmin, xmax, ymin, ymax] = bounds
  const scale = Math.min(
    (width - 2 * margin) / (xmax - xmin),
    (height - 2 * margin) / (ymax - ymin),
  )
  const ox = (width - scale * (xmax - xmin)) / 2
  const oy = (height - scale * (ymax - ymin)) / 2
  return {
    scale,
    toX: (wx) => ox + (wx - xmin) * scale,
    // canvas y grows downward; world y grows upward
    toY: (wy) => height - oy - (wy - ymin) * scale,
  }
}

function box(ctx: CanvasRenderingContext2D, tf: Transform, cx: number, cy: number, side: number): void {
  const s = side * tf.scale
  ctx.rect(tf.toX(cx) - s / 2, tf.toY(cy) - s / 2, s, s)
}

export function renderScene(ctx: CanvasRenderingContext2D, tf: Transform, scene: SceneJson): void {
  const goalSide = 2 * scene.goal_capture_radius
  scene.goals.forEach(([gx, gy], i) => {
    ctx.beginPath()
    box(ctx, tf, gx, gy, goalSide)
    if (i === scene.indicated_goal) {
      ctx.setLineDash([])
      ctx.strokeStyle = '#30c050'
      ctx.fillStyle = 'rgba(48, 192, 80, 0.25)'
      ctx.fill()
    } else {
      ctx.setLineDash([6, 4])
      ctx.strokeStyle = '#f0f0f0'
    }
    ctx.lineWidth = 2
    ctx.stroke()
    ctx.setLineDash([])
  })
  for (const [ox, oy] of scene.obstacles) {
    ctx.beginPath()
    box(ctx, tf, ox, oy, scene.obstacle_side)
    ctx.fillStyle = '#e878a8'
    ctx.fill()
  }
}

export function renderRobot(ctx: CanvasRenderingContext2D, tf: Transform, view: ViewState): void {
  if (!view.scene) return
  const color = METHOD_COLORS[view.method]
  if (view.trail.length > 1) {
    ctx.beginPath()
    ctx.moveTo(tf.toX(view.trail[0][0]), tf.toY(view.trail[0][1]))
    for (const [x, y] of view.trail.slice(1)) {
      ctx.lineTo(tf.toX(x), tf.toY(y))
    }
    ctx.strokeStyle = color
    ctx.lineWidth = 1.5
    ctx.stroke()
  }
  ctx.beginPath()
  ctx.arc(
    tf.toX(view.position[0]),
    tf.toY(view.position[1]),
    view.scene.robot_radius * tf.scale,
    0,
    2 * Math.PI,
  )
  ctx.fillStyle = color
  ctx.fill()
}

export function renderEntropyStrip(
  ctx: CanvasRenderingContext2D,
  view: ViewState,
  x: number,
  y: number,
  width: number,
  height: number,
): void {
  ctx.strokeStyle = '#555'
  ctx.strokeRect(x, y, width, height)
  const values = normalizedEntropy(view.entropy)
  if (values.length < 2) return
  const dx = width / (values.length - 1)
  ctx.beginPath()
  values.forEach((v, i) => {
    const px = x + i * dx
    const py = y + height - v * height
    if (i === 0) ctx.moveTo(px, py)
    else ctx.lineTo(px, py)
  })
  ctx.strokeStyle = METHOD_COLORS[view.method]
  ctx.lineWidth = 1.5
  ctx.stroke()
}

export function renderFrame(ctx: CanvasRenderingContext2D, view: ViewState, width: number, height: number): void {
  ctx.clearRect(0, 0, width, height)
  ctx.fillStyle = '#181820'
  ctx.fillRect(0, 0, width, height)
  const stripHeight = 60
  if (!view.scene) return
  const tf = makeTransform(view.scene.bounds, width, height - stripHeight - 10)
  ctx.strokeStyle = '#888'
  ctx.strokeRect(
    tf.toX(view.scene.bounds[0]),
    tf.toY(view.scene.bounds[3]),
    (view.scene.bounds[1] - view.scene.bounds[0]) * tf.scale,
    (view.scene.bounds[3] - view.scene.bounds[2]) * tf.scale,
  )
  renderScene(ctx, tf, view.scene)
  renderRobot(ctx, tf, view)
  renderEntropyStrip(ctx, view, 10, height - stripHeight, width - 20, stripHeight - 10)
}
