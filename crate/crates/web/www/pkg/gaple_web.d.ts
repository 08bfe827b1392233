/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    at_goal(): boolean;
    attention_area(): number;
    depth_rgba(): Uint8Array;
    map_height(): number;
    map_rgba(): Uint8Array;
    map_width(): number;
    constructor(seed: bigint, target: number);
    /**
     * Takes one shortest-path action; returns whether a goal was reached.
     */
    oracle_step(): boolean;
    pose(): string;
    reset(): void;
    rgb_rgba(): Uint8Array;
    semantic_rgba(): Uint8Array;
    /**
     * 0 forward, 1 backward, 2 strafe left, 3 strafe right, 4 turn left, 5 turn right.
     */
    step(action: number): boolean;
    steps(): number;
    /**
     * `-1` when no goal is reachable.
     */
    steps_to_goal(): number;
    target_name(): string;
    view_height(): number;
    view_width(): number;
}

/**
 * Returns `[trend, d1, m1, d2, m2, ...]` for the feature-distance curve.
 */
export function feature_curve(seed: bigint, kind: string, sample_cap: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_at_goal: (a: number) => number;
    readonly demo_attention_area: (a: number) => number;
    readonly demo_depth_rgba: (a: number) => [number, number];
    readonly demo_map_height: (a: number) => number;
    readonly demo_map_rgba: (a: number) => [number, number];
    readonly demo_map_width: (a: number) => number;
    readonly demo_new: (a: bigint, b: number) => [number, number, number];
    readonly demo_oracle_step: (a: number) => [number, number, number];
    readonly demo_pose: (a: number) => [number, number];
    readonly demo_reset: (a: number) => [number, number];
    readonly demo_rgb_rgba: (a: number) => [number, number];
    readonly demo_semantic_rgba: (a: number) => [number, number];
    readonly demo_step: (a: number, b: number) => [number, number, number];
    readonly demo_steps: (a: number) => number;
    readonly demo_steps_to_goal: (a: number) => number;
    readonly demo_target_name: (a: number) => [number, number];
    readonly demo_view_height: (a: number) => number;
    readonly demo_view_width: (a: number) => number;
    readonly feature_curve: (a: bigint, b: number, c: number, d: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
