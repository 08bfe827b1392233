/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_demo_free: (a: number, b: number) => void;
export const demo_at_goal: (a: number) => number;
export const demo_attention_area: (a: number) => number;
export const demo_depth_rgba: (a: number) => [number, number];
export const demo_map_height: (a: number) => number;
export const demo_map_rgba: (a: number) => [number, number];
export const demo_map_width: (a: number) => number;
export const demo_new: (a: bigint, b: number) => [number, number, number];
export const demo_oracle_step: (a: number) => [number, number, number];
export const demo_pose: (a: number) => [number, number];
export const demo_reset: (a: number) => [number, number];
export const demo_rgb_rgba: (a: number) => [number, number];
export const demo_semantic_rgba: (a: number) => [number, number];
export const demo_step: (a: number, b: number) => [number, number, number];
export const demo_steps: (a: number) => number;
export const demo_steps_to_goal: (a: number) => number;
export const demo_target_name: (a: number) => [number, number];
export const demo_view_height: (a: number) => number;
export const demo_view_width: (a: number) => number;
export const feature_curve: (a: bigint, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
