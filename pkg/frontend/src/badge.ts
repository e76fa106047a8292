// Picture-in-picture badge state machine. Holds only the latest event:
// a coloured MES marker for scored frames, an unsuitable-view indicator
// for discarded ones, an explicit disconnected state when the event
// stream drops. Numeric confidence never reaches this layer.

import type { LifecycleEvent, Mes, VerdictEvent } from "./protocol.js";

export type BadgeColour = "green" | "blue" | "orange" | "red";

export const MES_COLOURS: Record<Mes, BadgeColour> = {
  0: "green",
  1: "blue",
  2: "orange",
  3: "red",
};

export function colourFor(mes: Mes): BadgeColour {
  return MES_COLOURS[mes];
}

export interface BadgeState {
  connected: boolean;
  visible: boolean;
  suitable: boolean;
  mes: Mes | null;
  colour: BadgeColour | null;
}

export function initialBadge(): BadgeState {
  return { connected: false, visible: false, suitable: false, mes: null, colour: null };
}

export function badgeConnected(state: BadgeState): BadgeState {
  return { ...state, connected: true };
}

export function badgeDisconnected(): BadgeState {
  // never show a stale score after a connection loss
  return initialBadge();
}

export function badgeOnVerdict(state: BadgeState, event: VerdictEvent): BadgeState {
  if (event.kind === "scored" && event.mes !== undefined) {
    return {
      connected: state.connected,
      visible: true,
      suitable: true,
      mes: event.mes,
      colour: colourFor(event.mes),
    };
  }
  return { connected: state.connected, visible: true, suitable: false, mes: null, colour: null };
}

export function badgeOnLifecycle(state: BadgeState, event: LifecycleEvent): BadgeState {
  if (event.state === "running") {
    return { ...state, visible: true, suitable: false, mes: null, colour: null };
  }
  return { ...state, visible: false, suitable: false, mes: null, colour: null };
}
