"""Tokenization helpers shared by the binning, concept-extraction and distance paths.

Everything here is deterministic: a fixed stop-word list, a fixed
misspelling dictionary and purely rule-based suffix lemmatization. No
external language resources are consulted.
"""

import re

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")

# Function words plus task-generic filler ("use a brick as ...") that carries
# no idea content for alternate-use style prompts.
STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are aren't as at be
    because been before being below between both but by can can't cannot could
    couldn't did didn't do does doesn't doing don't down during each few for
    from further had hadn't has hasn't have haven't having he he'd he'll he's
    her here here's hers herself him himself his how how's i i'd i'll i'm i've
    if in into is isn't it it's its itself let's me more most mustn't my myself
    no nor not of off on once only or other ought our ours ourselves out over
    own same shan't she she'd she'll she's should shouldn't so some such than
    that that's the their theirs them themselves then there there's these they
    they'd they'll they're they've this those through to too under until up
    very was wasn't we we'd we'll we're we've were weren't what what's when
    when's where where's which while who who's whom why why's with won't would
    wouldn't you you'd you'll you're you've your yours yourself yourselves
    also could etc just like maybe might one something thing things will
    use used uses using make makes made making
    """.split()
)

# Small bundled dictionary for the spell-normalization pass.
SPELL_FIXES = {
    "teh": "the",
    "recieve": "receive",
    "seperate": "separate",
    "definately": "definitely",
    "occured": "occurred",
    "untill": "until",
    "wich": "which",
    "becuase": "because",
    "wierd": "weird",
    "freind": "friend",
    "dor": "door",
    "hamer": "hammer",
    "weigth": "weight",
    "papper": "paper",
}


def tokenize(text):
    """Lowercase, strip punctuation, return the raw token sequence."""
    return _TOKEN_RE.findall(text.lower())


def lemmatize(token):
    """Crude noun-form reduction via suffix rules (plurals and gerunds)."""
    if len(token) <= 3:
        return token
    if token.endswith("ies") and len(token) > 4:
        return token[:-3] + "y"
    if token.endswith("sses") or token.endswith("shes") or token.endswith("ches"):
        return token[:-2]
    if token.endswith("xes") or token.endswith("zes"):
        return token[:-2]
    if token.endswith("ss") or token.endswith("us") or token.endswith("is"):
        return token
    if token.endswith("s"):
        return token[:-1]
    return token


def content_tokens(text):
    """Spell-normalized, stop-word-free tokens in original order.

    Used for embedding-space documents; inflections are kept since
    embedding vocabularies normally cover them.
    """
    out = []
    for tok in tokenize(text):
        tok = SPELL_FIXES.get(tok, tok)
        if tok in STOPWORDS:
            continue
        out.append(tok)
    return out


def content_lemmas(text):
    """Lemmatized content tokens; a token is dropped if either its surface
    form or its lemma is a stop-word."""
    out = []
    for tok in tokenize(text):
        tok = SPELL_FIXES.get(tok, tok)
        if tok in STOPWORDS:
            continue
        lemma = lemmatize(tok)
        if lemma in STOPWORDS:
            continue
        out.append(lemma)
    return out
