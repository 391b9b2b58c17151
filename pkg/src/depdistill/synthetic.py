"""Seeded toy grammar producing UD-style dependency trees.

Used for desk-scale experiments when no treebank is at hand.  Clauses have
a subject, a verb, an optional object and prepositional phrases.  Each PP
attaches to the verb or to any noun already in the clause, drawn from a
softmax over a latent lexical affinity, so attachment is ambiguous and
only partly predictable from the words.  Some verbs take a clausal
complement introduced by "that".  Noun phrases carry determiners,
adjectives and coordination.  Word frequencies are Zipfian, so a few
hundred sentences leave a long tail of rare words.
"""
import numpy as np

from .conllu import Sentence

LEXICON_SIZES = {"NOUN": 150, "VERB": 60, "ADJ": 50, "ADP": 10, "ADV": 20, "DET": 5, "PRON": 6}


class ToyGrammar:
    def __init__(self, seed=0, affinity_scale=2.5):
        rng = np.random.default_rng(seed)
        self.lexicon = {pos: [f"{pos.lower()}{i}" for i in range(n)]
                        for pos, n in LEXICON_SIZES.items()}
        self.weights = {}
        for pos, words in self.lexicon.items():
            w = 1.0 / np.arange(1, len(words) + 1) ** 1.1
            self.weights[pos] = w / w.sum()
        n_adp = LEXICON_SIZES["ADP"]
        # latent affinity of each preposition for each possible head word
        self.noun_affinity = rng.normal(0.0, affinity_scale, size=(n_adp, LEXICON_SIZES["NOUN"]))
        self.verb_affinity = rng.normal(0.0, affinity_scale, size=(n_adp, LEXICON_SIZES["VERB"]))
        self.transitive = rng.random(LEXICON_SIZES["VERB"]) < 0.6
        self.clausal = rng.random(LEXICON_SIZES["VERB"]) < 0.25

    def _word(self, pos, rng):
        idx = int(rng.choice(len(self.lexicon[pos]), p=self.weights[pos]))
        return idx, self.lexicon[pos][idx]

    def sentence(self, rng):
        toks = []  # [form, upos, head index (0-based) or "ROOT", label]

        def add(form, upos, head, label):
            toks.append([form, upos, head, label])
            return len(toks) - 1

        def noun_phrase(label, allow_coord=True):
            """Returns (head index, noun lexicon id or None for pronouns)."""
            if rng.random() < 0.15:
                return add(self._word("PRON", rng)[1], "PRON", None, label), None
            deps = []
            if rng.random() < 0.8:
                deps.append(add(self._word("DET", rng)[1], "DET", None, "det"))
            for _ in range(rng.poisson(0.5)):
                deps.append(add(self._word("ADJ", rng)[1], "ADJ", None, "amod"))
            n_idx, noun = self._word("NOUN", rng)
            head = add(noun, "NOUN", None, label)
            for k in deps:
                toks[k][2] = head
            if allow_coord and rng.random() < 0.15:
                cc = add("and", "CCONJ", None, "cc")
                other, _ = noun_phrase("conj", allow_coord=False)
                toks[cc][2] = other
                toks[other][2] = head
            return head, n_idx

        def clause(depth):
            """Builds a clause; returns the verb index (its own head is set by the caller)."""
            subj, _ = noun_phrase("nsubj")
            adv = add(self._word("ADV", rng)[1], "ADV", None, "advmod") if rng.random() < 0.2 else None
            v_idx, verb = self._word("VERB", rng)
            v = add(verb, "VERB", None, None)
            toks[subj][2] = v
            if adv is not None:
                toks[adv][2] = v
            nouns = []  # attachment candidates: (token index, noun id)
            if self.transitive[v_idx]:
                obj, obj_n = noun_phrase("obj")
                toks[obj][2] = v
                if obj_n is not None:
                    nouns.append((obj, obj_n))
            for _ in range(rng.poisson(1.0)):
                p_idx, prep = self._word("ADP", rng)
                case = add(prep, "ADP", None, "case")
                logits = [self.verb_affinity[p_idx, v_idx]] + \
                         [self.noun_affinity[p_idx, n] for _, n in nouns]
                p = np.exp(np.asarray(logits) - max(logits))
                choice = int(rng.choice(len(logits), p=p / p.sum()))
                pobj, pn = noun_phrase("obl" if choice == 0 else "nmod", allow_coord=False)
                toks[case][2] = pobj
                toks[pobj][2] = v if choice == 0 else nouns[choice - 1][0]
                if pn is not None:
                    nouns.append((pobj, pn))
            if depth == 0 and self.clausal[v_idx] and rng.random() < 0.6:
                mark = add("that", "SCONJ", None, "mark")
                inner = clause(depth + 1)
                toks[mark][2] = inner
                toks[inner][2] = v
                toks[inner][3] = "ccomp"
            if rng.random() < 0.2:
                add(self._word("ADV", rng)[1], "ADV", v, "advmod")
            return v

        root = clause(0)
        toks[root][2] = "ROOT"
        toks[root][3] = "root"
        if rng.random() < 0.8:
            add(".", "PUNCT", root, "punct")
        heads = [0 if head == "ROOT" else head + 1 for _, _, head, _ in toks]
        return Sentence([t[0] for t in toks], [t[1] for t in toks], heads, [t[3] for t in toks])

    def corpus(self, n, seed):
        rng = np.random.default_rng(seed)
        return [self.sentence(rng) for _ in range(n)]


def synthetic_corpus(n, seed=0, grammar_seed=0):
    return ToyGrammar(grammar_seed).corpus(n, seed)
