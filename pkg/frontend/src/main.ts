// Browser entry point: joins the session service, runs the trial flow,
// forwards keyboard state, and renders at the display rate while the
// server remains authoritative over all physics.

import { InputTracker } from './input.js'
import { connect } from './net.js'
import type { Method } from './protocol.js'
import { renderFrame } from './render.js'
import { applyFrame, initialViewState, type ViewState } from './state.js'
import { TrialFlow } from './trial.js'

const HEARTBEAT_MS = 100 // matches the 10 Hz control rate

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id)
  if (!node) throw new Error(`missing element #${id}`)
  return node as T
}

function main(): void {
  const canvas = el<HTMLCanvasElement>('arena')
  const ctx = canvas.getContext('2d')
  if (!ctx) throw new Error('no 2d context')
  const status = el<HTMLDivElement>('status')
  const summary = el<HTMLTableElement>('summary')
  const startButton = el<HTMLButtonElement>('start')
  const abortButton = el<HTMLButtonElement>('abort')

  const proto = location.protocol === 'https:' ? 'wss' : 'ws'
  const socket = connect(`${proto}://${location.host}/ws`, () => {
    status.textContent = 'disconnected — reload to rejoin'
    status.className = 'banner error'
  })

  const methods: Method[] = ['direct', 'ho-apf', 'intent']
  const flow = new TrialFlow(methods)
  const input = new InputTracker(100)
  let view: ViewState = initialViewState()
  let joined = false
  let awaitingResult = false

  const sendMask = () => {
    socket.send({ type: 'key-state', mask: input.snapshot().mask })
  }

  window.addEventListener('keydown', (ev) => {
    if (!view.running) return
    const snap = input.keyDown(ev.code)
    if (snap) {
      sendMask()
      if (snap.locked) status.textContent = 'input budget exhausted — hands off'
    }
  })
  window.addEventListener('keyup', (ev) => {
    const snap = input.keyUp(ev.code)
    if (snap) sendMask()
  })
  setInterval(() => {
    if (view.running) sendMask() // heartbeat: latest-wins on the server
  }, HEARTBEAT_MS)

  startButton.onclick = () => {
    if (!joined || awaitingResult || flow.done) return
    const next = flow.current
    socket.send({ type: 'select-method', method: next.method })
    socket.send({ type: 'start-trial', seed: next.seed })
    input.reset(view.budget)
    awaitingResult = true
    status.textContent = `trial ${next.trial + 1}/${flow.trialsPerRound} — ${next.method}`
  }
  abortButton.onclick = () => {
    if (view.running) socket.send({ type: 'abort' })
  }

  const renderSummary = () => {
    const rows = flow
      .summaries()
      .map(
        (s) =>
          `<tr><td>${s.method}</td><td>${s.successes}/${s.trials}</td>` +
          `<td>${s.collisions}</td><td>${s.timeouts}</td>` +
          `<td>${s.meanTicks.toFixed(1)}</td><td>${s.meanInputs.toFixed(1)}</td></tr>`,
      )
      .join('')
    summary.innerHTML =
      '<tr><th>method</th><th>goals</th><th>collisions</th><th>timeouts</th>' +
      '<th>mean ticks</th><th>mean inputs</th></tr>' + rows
  }

  const frame = () => {
    for (const incoming of socket.drain()) {
      view = applyFrame(view, incoming)
      if (incoming.type === 'joined') {
        joined = true
        status.textContent = 'joined — press start'
      }
      if (incoming.type === 'trial-result' && awaitingResult) {
        awaitingResult = false
        flow.record(incoming)
        renderSummary()
        status.textContent = flow.done
          ? 'all rounds complete'
          : `${incoming.outcome}${incoming.aborted ? ' (aborted)' : ''} — press start for the next trial`
      }
      if (incoming.type === 'error') {
        status.textContent = `server error: ${incoming.message}`
      }
    }
    renderFrame(ctx, view, canvas.width, canvas.height)
    requestAnimationFrame(frame)
  }

  const tryJoin = setInterval(() => {
    if (socket.open && !joined) socket.send({ type: 'join' })
    if (joined) clearInterval(tryJoin)
  }, 200)

  requestAnimationFrame(frame)
}

main()
