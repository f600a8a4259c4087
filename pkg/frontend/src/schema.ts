/**
 * Wire-contract types for the radeval v1 service, mirrored with zod so
 * every payload is validated on the way in (tasks) and out (responses).
 * The reason strings must match the server enum byte for byte.
 */

import { z } from "zod";

/** Disagreement reasons, exactly as the server spells them. */
export const REASONS = [
  "INCORRECT_FINDING",
  "INCORRECT_LOCATION",
  "INCORRECT_SEVERITY",
] as const;

export type Reason = (typeof REASONS)[number];

/** Human-readable labels shown in the reason dropdown. */
export const REASON_LABELS: Record<Reason, string> = {
  INCORRECT_FINDING: "finding I do not agree with is present",
  INCORRECT_LOCATION: "incorrect location of finding",
  INCORRECT_SEVERITY: "incorrect severity of finding",
};

const sha256Pattern = /^[0-9a-f]{64}$/;

export const PreferenceTaskSchema = z
  .object({
    task_id: z.string().min(1),
    kind: z.literal("preference"),
    phase: z.enum(["preference", "collaboration"]),
    case_id: z.string().min(1),
    report_a: z.string(),
    report_b: z.string(),
  })
  .strict();

export const CorrectionTaskSchema = z
  .object({
    task_id: z.string().min(1),
    kind: z.literal("correction"),
    phase: z.literal("correction"),
    case_id: z.string().min(1),
    report_text: z.string(),
    report_text_sha256: z.string().regex(sha256Pattern),
  })
  .strict();

export const TaskSchema = z.discriminatedUnion("kind", [
  PreferenceTaskSchema,
  CorrectionTaskSchema,
]);

export type PreferenceTask = z.infer<typeof PreferenceTaskSchema>;
export type CorrectionTask = z.infer<typeof CorrectionTaskSchema>;
export type Task = z.infer<typeof TaskSchema>;

export const SpanEditSchema = z
  .object({
    start: z.number().int().nonnegative(),
    end: z.number().int().positive(),
    reason: z.enum(REASONS),
    clinically_significant: z.boolean(),
    replacement: z.string(),
  })
  .strict()
  .refine((edit) => edit.start < edit.end, { message: "empty span" });

export type SpanEdit = z.infer<typeof SpanEditSchema>;

export const PreferenceSubmissionSchema = z
  .object({
    kind: z.literal("preference"),
    task_id: z.string().min(1),
    choice: z.enum(["A", "B", "EQUIVALENT"]),
    justification: z.string().min(1),
    timestamp: z.number(),
  })
  .strict();

export const CorrectionSubmissionSchema = z
  .object({
    kind: z.literal("correction"),
    task_id: z.string().min(1),
    image_quality_ok: z.boolean(),
    edits: z.array(SpanEditSchema),
    displayed_text_sha256: z.string().regex(sha256Pattern),
    timestamp: z.number(),
  })
  .strict();

export type PreferenceSubmission = z.infer<typeof PreferenceSubmissionSchema>;
export type CorrectionSubmission = z.infer<typeof CorrectionSubmissionSchema>;
export type Submission = PreferenceSubmission | CorrectionSubmission;

/** Build and validate a preference submission. */
export function buildPreferenceSubmission(
  taskId: string,
  choice: "A" | "B" | "EQUIVALENT",
  justification: string,
  timestamp: number,
): PreferenceSubmission {
  return PreferenceSubmissionSchema.parse({
    kind: "preference",
    task_id: taskId,
    choice,
    justification,
    timestamp,
  });
}

/** Build and validate a correction submission. */
export function buildCorrectionSubmission(
  taskId: string,
  imageQualityOk: boolean,
  edits: SpanEdit[],
  displayedTextSha256: string,
  timestamp: number,
): CorrectionSubmission {
  return CorrectionSubmissionSchema.parse({
    kind: "correction",
    task_id: taskId,
    image_quality_ok: imageQualityOk,
    edits,
    displayed_text_sha256: displayedTextSha256,
    timestamp,
  });
}
