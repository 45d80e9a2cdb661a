import { AssignmentEntries } from "./types.js";

/** Dropdown value meaning "leave this class unstyled". */
export const UNSTYLED = "";

/**
 * Assignment panel state. `acknowledged` is what the server last confirmed
 * and is the only thing rendered as active; `selection` is the in-progress
 * edit. The two only converge through applyAcknowledged, so the UI can
 * never display an assignment the server has not accepted.
 */
export interface PanelState {
  acknowledged: AssignmentEntries;
  selection: Record<string, string>;
  lastError: string | null;
}

export function initialPanel(): PanelState {
  return { acknowledged: {}, selection: {}, lastError: null };
}

export function selectStyle(state: PanelState, classId: number, styleId: string): PanelState {
  return {
    ...state,
    selection: { ...state.selection, [String(classId)]: styleId },
  };
}

/** Selection as PUT entries: unstyled classes are simply omitted. */
export function selectionEntries(state: PanelState): AssignmentEntries {
  const entries: AssignmentEntries = {};
  for (const [classId, styleId] of Object.entries(state.selection)) {
    if (styleId !== UNSTYLED) {
      entries[classId] = styleId;
    }
  }
  return entries;
}

/** Server said yes (PUT 2xx or a fresh GET): this is now the truth. */
export function applyAcknowledged(state: PanelState, entries: AssignmentEntries): PanelState {
  const selection: Record<string, string> = { ...state.selection };
  for (const classId of Object.keys(selection)) {
    selection[classId] = entries[classId] ?? UNSTYLED;
  }
  return {
    acknowledged: { ...entries },
    selection,
    lastError: null,
  };
}

/** Server said no: keep the acknowledged assignment untouched. */
export function applyRejection(
  state: PanelState,
  detail: string,
  offending?: { class_id: string; style_id: string },
): PanelState {
  const suffix = offending ? ` (class ${offending.class_id} -> ${offending.style_id})` : "";
  return { ...state, lastError: detail + suffix };
}
