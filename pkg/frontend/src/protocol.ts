// Wire types for the scoring service: newline-delimited JSON over a
// line transport. One schema per message so malformed service output is
// rejected at the boundary instead of leaking into the UI state.

import { z } from "zod";

export const MES_VALUES = [0, 1, 2, 3] as const;
export type Mes = (typeof MES_VALUES)[number];

const mesSchema = z
  .number()
  .int()
  .min(0)
  .max(3)
  .transform((v) => v as Mes);

export const verdictEventSchema = z.object({
  evt: z.literal("verdict"),
  frame: z.number().int().nonnegative(),
  ts: z.number(),
  kind: z.enum(["scored", "discarded"]),
  suitable: z.boolean(),
  mes: mesSchema.optional(),
});
export type VerdictEvent = z.infer<typeof verdictEventSchema>;

export const lifecycleEventSchema = z.object({
  evt: z.literal("lifecycle"),
  state: z.enum(["idle", "running", "review"]),
  session: z.string().nullable(),
});
export type LifecycleEvent = z.infer<typeof lifecycleEventSchema>;

export const eventSchema = z.discriminatedUnion("evt", [
  verdictEventSchema,
  lifecycleEventSchema,
]);
export type ServiceEvent = z.infer<typeof eventSchema>;

export const selectionEntrySchema = z.object({
  frame: z.number().int().nonnegative(),
  mes: mesSchema,
  certainty: z.number().min(0).max(1),
  probs: z.array(z.number()).length(4),
  image: z.string(),
});
export type SelectionEntry = z.infer<typeof selectionEntrySchema>;

export const videoScoreSchema = z.object({
  overall_mes: mesSchema,
  peak_frame: z.number().int().nonnegative(),
  peak_probs: z.array(z.number()).length(4),
});

export const reviewBundleSchema = z.object({
  session: z.string(),
  unscorable: z.boolean(),
  video: videoScoreSchema.nullable(),
  selection: z.array(selectionEntrySchema),
  summary: z.record(z.string(), z.number().int()),
});
export type ReviewBundle = z.infer<typeof reviewBundleSchema>;

export const editSchema = z.object({
  frame: z.number().int().nonnegative(),
  mes: mesSchema,
});
export type Edit = z.infer<typeof editSchema>;

export const reviewSubmitRequestSchema = z.object({
  cmd: z.literal("review_submit"),
  edits: z.array(editSchema),
  journal: z.array(z.number().int().nonnegative()),
});

export const responseSchema = z.looseObject({
  ok: z.boolean(),
  error: z.string().optional(),
  message: z.string().optional(),
  session: z.string().optional(),
  bundle: reviewBundleSchema.optional(),
});
export type ServiceResponse = z.infer<typeof responseSchema>;

export function encodeLine(payload: unknown): string {
  return JSON.stringify(payload) + "\n";
}

export function decodeEvent(line: string): ServiceEvent {
  return eventSchema.parse(JSON.parse(line));
}

export function decodeResponse(line: string): ServiceResponse {
  return responseSchema.parse(JSON.parse(line));
}
