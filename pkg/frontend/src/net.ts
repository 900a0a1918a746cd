// Thin websocket wrapper: outgoing frames serialize immediately,
// incoming frames are queued and drained by the render loop so network
// events never mutate view state mid-frame.

import { parseServerFrame, type ClientFrame, type ServerFrame } from './protocol.js'

export interface FrameSocket {
  send(frame: ClientFrame): void
  drain(): ServerFrame[]
  close(): void
  readonly open: boolean
}

export function connect(url: string, onClose?: () => void): FrameSocket {
  const socket = new WebSocket(url)
  const queue: ServerFrame[] = []
  let open = false
  socket.onopen = () => {
    open = true
  }
  socket.onmessage = (ev: MessageEvent<string>) => {
    queue.push(parseServerFrame(ev.data))
  }
  socket.onclose = () => {
    open = false
    onClose?.()
  }
  return {
    send(frame) {
      if (socket.readyState === WebSocket.OPEN) socket.send(JSON.stringify(frame))
    },
    drain() {
      return queue.splice(0, queue.length)
    },
    close() {
      socket.close()
    },
    get open() {
      return open
    },
  }
}
