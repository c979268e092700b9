import { describe, expect, it } from 'vitest';

import {
  addPrompt,
  canSegment,
  canvasToImage,
  clearPrompts,
  initialState,
  restoreFromServer,
  setTau,
  undoPrompt,
} from '../src/state.js';

const rect = (width: number, height: number) => ({ left: 0, top: 0, width, height });

describe('canvasToImage', () => {
  it('is the identity for an unscaled frame', () => {
    expect(canvasToImage(256, 256, rect(512, 512), 512, 512)).toEqual([256, 256]);
  });

  it('halves coordinates under 2x CSS scaling', () => {
    // canvas displayed at 1024 CSS px for a 512 px frame
    expect(canvasToImage(512, 512, rect(1024, 1024), 512, 512)).toEqual([256, 256]);
    expect(canvasToImage(100, 40, rect(1024, 1024), 512, 512)).toEqual([50, 20]);
  });

  it('honors the canvas offset', () => {
    const r = { left: 30, top: 10, width: 512, height: 512 };
    expect(canvasToImage(30, 10, r, 512, 512)).toEqual([0, 0]);
  });

  it('returns null outside the frame', () => {
    expect(canvasToImage(600, 10, rect(512, 512), 512, 512)).toBeNull();
    expect(canvasToImage(-1, 10, rect(512, 512), 512, 512)).toBeNull();
  });
});

describe('prompt list', () => {
  it('appends and undoes in LIFO order', () => {
    let s = initialState();
    s = addPrompt(s, [1, 2]);
    s = addPrompt(s, [3, 4]);
    expect(s.prompts).toEqual([[1, 2], [3, 4]]);
    s = undoPrompt(s);
    expect(s.prompts).toEqual([[1, 2]]);
  });

  it('undo invalidates the last segmentation', () => {
    let s = { ...initialState(), lastSegmentationId: 'abc' };
    s = addPrompt(s, [1, 2]);
    s = undoPrompt(s);
    expect(s.lastSegmentationId).toBeNull();
  });

  it('undo on an empty list is a no-op', () => {
    const s = initialState();
    expect(undoPrompt(s)).toBe(s);
  });

  it('gates the segment action on having prompts', () => {
    let s = initialState();
    expect(canSegment(s)).toBe(false);
    s = addPrompt(s, [5, 5]);
    expect(canSegment(s)).toBe(true);
    expect(canSegment(clearPrompts(s))).toBe(false);
  });
});

describe('tau slider', () => {
  it('stores values inside the open unit interval', () => {
    const s = initialState();
    expect(setTau(s, 0.7).tau).toBeCloseTo(0.7);
    expect(setTau(s, 0).tau).toBeGreaterThan(0);
    expect(setTau(s, 1).tau).toBeLessThan(1);
  });
});

describe('session restore', () => {
  it('recovers prompts and the latest segmentation id', () => {
    const server = {
      prompt_sets: {
        p1: { points: [[1, 1]] as [number, number][] },
        p2: { points: [[2, 3], [4, 5]] as [number, number][] },
      },
      segmentations: ['s1', 's2'],
    };
    const s = restoreFromServer(initialState(), server);
    expect(s.prompts).toEqual([[2, 3], [4, 5]]);
    expect(s.lastSegmentationId).toBe('s2');
  });

  it('handles an empty server state', () => {
    const s = restoreFromServer(initialState(), {
      prompt_sets: {},
      segmentations: [],
    });
    expect(s.prompts).toEqual([]);
    expect(s.lastSegmentationId).toBeNull();
  });
});
