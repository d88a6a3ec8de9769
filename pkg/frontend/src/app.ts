/** Wires the editor DOM to the API client. One generate request is live at
 * a time: selecting another gap bumps the request tag and stale responses
 * are dropped on arrival. */

import { ApiClient } from './api.js';
import type { Candidate } from './api.js';
import { computeGapMarkers, renderGaps, renderPlainText } from './gaps.js';
import {
  EditorState,
  MalformedResponseError,
  acceptCandidate,
  initialState,
  selectGap,
  undoLast,
  withCandidates,
  withLocateResult,
} from './state.js';

export const DEFAULT_BEAM_SIZE = 20;
export const MAX_BEAM_SIZE = 20;

export class PolishApp {
  private state: EditorState | null = null;
  private generateSeq = 0;
  private locateSeq = 0;

  constructor(
    private readonly root: Document | HTMLElement,
    private readonly api: ApiClient,
  ) {
    this.element<HTMLButtonElement>('start-button').addEventListener('click', () => {
      const text = this.element<HTMLTextAreaElement>('text-input').value;
      if (text.length > 0) {
        void this.start(text);
      }
    });
    this.element<HTMLButtonElement>('undo-button').addEventListener('click', () => {
      this.undo();
    });
    this.element<HTMLButtonElement>('reset-button').addEventListener('click', () => {
      this.reset();
    });
    const beam = this.element<HTMLSelectElement>('beam-size');
    for (let k = 1; k <= MAX_BEAM_SIZE; k++) {
      const option = document.createElement('option');
      option.value = String(k);
      option.textContent = String(k);
      beam.appendChild(option);
    }
    beam.value = String(DEFAULT_BEAM_SIZE);
  }

  get currentState(): EditorState | null {
    return this.state;
  }

  element<T extends HTMLElement>(id: string): T {
    const found = (this.root instanceof Document ? this.root : this.root.ownerDocument)
      .getElementById(id);
    if (found === null) {
      throw new Error(`missing element #${id}`);
    }
    return found as T;
  }

  beamSize(): number {
    return Number(this.element<HTMLSelectElement>('beam-size').value);
  }

  async start(text: string): Promise<void> {
    this.state = initialState(text);
    this.element('input-panel').hidden = true;
    this.element('editor-panel').hidden = false;
    this.hideBanner();
    this.renderText();
    this.renderHistory();
    this.renderCandidates(null);
    await this.locate();
  }

  reset(): void {
    this.state = null;
    this.generateSeq++;
    this.locateSeq++;
    this.element('editor-panel').hidden = true;
    this.element('input-panel').hidden = false;
  }

  async locate(): Promise<void> {
    if (this.state === null) return;
    const seq = ++this.locateSeq;
    try {
      const response = await this.api.locate(this.state.text);
      if (seq !== this.locateSeq || this.state === null) return;
      this.state = withLocateResult(this.state, response.positions);
      this.hideBanner();
      this.renderText();
    } catch (err) {
      if (seq !== this.locateSeq) return;
      if (err instanceof MalformedResponseError) {
        this.showBanner(`malformed locate response: ${err.message}`, null);
      } else {
        this.showBanner(humanMessage(err), () => void this.locate());
      }
    }
  }

  async selectGap(gap: number): Promise<void> {
    if (this.state === null) return;
    this.state = selectGap(this.state, gap);
    const seq = ++this.generateSeq;
    this.renderCandidates('loading');
    try {
      const response = await this.api.generate(this.state.text, gap, this.beamSize());
      if (seq !== this.generateSeq || this.state === null) return; // stale
      this.state = withCandidates(this.state, response.candidates);
      this.renderCandidates(this.state.candidates.length === 0 ? 'empty' : null);
    } catch (err) {
      if (seq !== this.generateSeq) return;
      this.showBanner(humanMessage(err), () => void this.selectGap(gap));
    }
  }

  accept(index: number): void {
    if (this.state === null) return;
    this.state = acceptCandidate(this.state, index);
    this.renderText();
    this.renderHistory();
    this.renderCandidates(null);
    void this.locate();
  }

  undo(): void {
    if (this.state === null || this.state.history.length === 0) return;
    this.state = undoLast(this.state);
    this.renderText();
    this.renderHistory();
    this.renderCandidates(null);
    void this.locate();
  }

  private renderText(): void {
    if (this.state === null) return;
    const line = this.element('editor-line');
    if (this.state.gapProbabilities === null) {
      renderPlainText(line, this.state.text);
      return;
    }
    const markers = computeGapMarkers(this.state.gapProbabilities);
    renderGaps(line, this.state.text, markers, (gap) => void this.selectGap(gap));
  }

  private renderCandidates(note: 'loading' | 'empty' | null): void {
    const list = this.element('candidate-list');
    const title = this.element('candidate-title');
    list.textContent = '';
    if (this.state === null || this.state.selectedGap === null) {
      title.textContent = 'pick a gap to generate similes';
      return;
    }
    if (note === 'loading') {
      title.textContent = `generating at gap ${this.state.selectedGap}…`;
      return;
    }
    if (note === 'empty') {
      title.textContent = `no simile for gap ${this.state.selectedGap}`;
      return;
    }
    title.textContent = `candidates for gap ${this.state.selectedGap}`;
    this.state.candidates.forEach((candidate: Candidate, index: number) => {
      const item = document.createElement('li');
      const button = document.createElement('button');
      button.type = 'button';
      button.className = 'candidate';
      button.dataset.candidate = String(index);
      button.textContent = `${candidate.simile}  (${candidate.log_prob.toFixed(2)})`;
      button.addEventListener('click', () => this.accept(index));
      item.appendChild(button);
      list.appendChild(item);
    });
  }

  private renderHistory(): void {
    if (this.state === null) return;
    const list = this.element('history-list');
    list.textContent = '';
    this.state.history.forEach((step, i) => {
      const item = document.createElement('li');
      item.textContent = `#${i + 1} @${step.offset}: ${step.simile}`;
      list.appendChild(item);
    });
    this.element<HTMLButtonElement>('undo-button').disabled =
      this.state.history.length === 0;
  }

  private showBanner(message: string, retry: (() => void) | null): void {
    const banner = this.element('banner');
    banner.hidden = false;
    banner.textContent = message;
    if (retry !== null) {
      const button = document.createElement('button');
      button.type = 'button';
      button.id = 'retry-button';
      button.textContent = 'retry';
      button.addEventListener('click', () => {
        this.hideBanner();
        retry();
      });
      banner.appendChild(button);
    }
  }

  private hideBanner(): void {
    const banner = this.element('banner');
    banner.hidden = true;
    banner.textContent = '';
  }
}

function humanMessage(err: unknown): string {
  if (err instanceof Error) {
    return err.message;
  }
  return 'request failed';
}
