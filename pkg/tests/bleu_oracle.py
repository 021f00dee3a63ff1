"""Brute-force BLEU oracle used to cross-check the similarity module.

Deliberately shares no code with melo: its own tokenizer, dict-based n-gram
counting, and its own aggregation. Rules implemented:

  tokenization   lowercase, split on Unicode whitespace, strip leading and
                 trailing punctuation (Unicode category P*) per token
  precision      modified n-gram precision against a single reference
  add-one        (clipped+1)/(total+1) for orders n >= 2; unigram stays raw;
                 orders with zero hypothesis n-grams count as p=1
  none           raw precision; a zero precision makes the whole score 0;
                 orders with zero hypothesis n-grams are skipped and the
                 geometric mean renormalizes over the remaining orders
  brevity        exp(1 - r/c) when c < r, else 1
"""

import math
import unicodedata


def oracle_tokenize(text):
    tokens = []
    for raw in text.lower().split():
        start, end = 0, len(raw)
        while start < end and unicodedata.category(raw[start]).startswith("P"):
            start += 1
        while end > start and unicodedata.category(raw[end - 1]).startswith("P"):
            end -= 1
        if end > start:
            tokens.append(raw[start:end])
    return tokens


def oracle_bleu(reference, hypothesis, max_ngram=4, smoothing="add-one"):
    ref = oracle_tokenize(reference)
    hyp = oracle_tokenize(hypothesis)
    if not ref or not hyp:
        raise ValueError("a side tokenized to zero tokens")

    logs = []
    for n in range(1, max_ngram + 1):
        hyp_grams = [tuple(hyp[i : i + n]) for i in range(len(hyp) - n + 1)]
        if not hyp_grams:
            if smoothing == "add-one":
                logs.append(0.0)
            continue
        ref_counts = {}
        for gram in (tuple(ref[i : i + n]) for i in range(len(ref) - n + 1)):
            ref_counts[gram] = ref_counts.get(gram, 0) + 1
        hyp_counts = {}
        for gram in hyp_grams:
            hyp_counts[gram] = hyp_counts.get(gram, 0) + 1
        clipped = 0
        for gram, count in hyp_counts.items():
            clipped += min(count, ref_counts.get(gram, 0))
        total = len(hyp_grams)
        if smoothing == "add-one" and n >= 2:
            precision = (clipped + 1) / (total + 1)
        else:
            precision = clipped / total
        if precision == 0.0:
            return 0.0
        logs.append(math.log(precision))

    if not logs:
        return 0.0
    geo_mean = math.exp(sum(logs) / len(logs))
    c, r = len(hyp), len(ref)
    brevity = 1.0 if c >= r else math.exp(1.0 - r / c)
    return brevity * geo_mean
