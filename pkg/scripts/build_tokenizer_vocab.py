#!/usr/bin/env python3
"""Train the bundled byte-pair vocabulary and write it to assets/.

A deliberately small BPE (default 768 merges) over an embedded corpus of
common English words and caption phrasing. The committed asset keeps
tokenization reproducible; a pretrained tokenizer can still be swapped in
through the adapter interface at runtime.

Usage: python3 scripts/build_tokenizer_vocab.py [--merges N]
"""

import argparse
import collections
import json
from pathlib import Path

WORDS = """
the of and a to in is you that it he was for on are as with his they at be this
have from or one had by word but not what all were we when your can said there
use an each which she do how their if will up other about out many then them
these so some her would make like him into time has look two more write go see
number no way could people my than first water been call who oil its now find
long down day did get come made may part over new sound take only little work
know place year live me back give most very after thing our just name good
sentence man think say great where help through much before line right too mean
old any same tell boy follow came want show also around form three small set put
end does another well large must big even such because turn here why ask went
men read need land different home us move try kind hand picture again change off
play spell air away animal house point page letter mother answer found study
still learn should america world high every near add food between own below
country plant last school father keep tree never start city earth eye light
thought head under story saw left dont few while along might close something
seem next hard open example begin life always those both paper together got
group often run important until children side feet car mile night walk white
sea began grow took river four carry state once book hear stop without second
later miss idea enough eat face watch far indian real almost let above girl
sometimes mountain cut young talk soon list song being leave family body music
color stand sun questions fish area mark dog horse birds problem complete room
knew since ever piece told usually didnt friends easy heard order red door sure
become top ship across today during short better best however low hours black
products happened whole measure remember early waves reached listen wind rock
space covered fast several hold himself toward five step morning passed vowel
true hundred against pattern numeral table north slowly money map farm pulled
draw voice seen cold cried plan notice south sing war ground fall king town
unit figure certain field travel wood fire upon done english road half ten
fly gave box finally wait correct oh quickly person became shown minutes strong
verb stars front feel fact inches street decided contain course surface produce
building ocean class note nothing rest carefully scientists inside wheels stay
green known island week less machine base ago stood plane system behind ran
round boat game force brought understand warm common bring explain dry though
language shape deep thousands yes clear equation yet government filled heat
full hot check object am rule among noun power cannot able six size dark ball
material special heavy fine pair circle include built matter square syllables
perhaps bill felt suddenly test direction center farmers ready anything divided
general energy subject europe moon region return believe dance members picked
simple cells paint mind love cause rain exercise eggs train blue wish drop
developed window difference distance heart sit sum summer wall forest probably
legs sat main winter wide written length reason kept interest arms brother race
present beautiful store job edge past sign record finished discovered wild
happy beside gone sky glass million west lay weather root instruments meet
third months paragraph raised represent soft whether clothes flowers shall
teacher held describe drive cross speak solve appear metal son either ice
sleep village factors result jumped snow ride care floor hill pushed baby buy
century outside everything tall already instead phrase soil bed copy free hope
spring case laughed nation quite type themselves temperature bright lead
everyone method section lake consonant within dictionary hair age amount scale
pounds although per broken moment tiny possible gold milk quiet natural lot
stone act build middle speed count cat someone sail rolled bear wonder smiled
angle fraction africa killed melody bottom trip hole poor lets fight surprise
french died beat exactly remain dress iron couldnt fingers row least catch
climbed wrote shouted continued itself else plains gas england burning design
joined foot law ears grass youre grew skin valley cents key president brown
trouble cool cloud lost sent symbols wear bad save experiment engine alone
drawing east pay single touch information express mouth yard equal decimal
yourself control practice report straight rise statement stick party seeds
suppose woman coast bank period wire choose clean visit bit whose received
garden please strange caught fell team god captain direct ring serve child
desert increase history cost maybe business separate break uncle hunting flow
lady students human art feeling supply corner electric insects crops tone hit
sand doctor provide thus wont cook bones tail board modern compound mine wasnt
fit addition belong safe soldiers guess silent trade rather compare crowd poem
enjoy elements indicate except expect flat seven interesting sense string blow
famous value wings movement pole exciting branches thick blood lie spot bell
fun loud consider suggested thin position entered fruit tied rich dollars send
sight chief japanese stream plants rhythm eight science major observe tube
necessary weight meat lifted process army hat property particular swim terms
current park sell shoulder industry wash block spread cattle wife sharp
company radio well action capital factories settled yellow isnt southern
truck fair printed wouldnt ahead chance born level triangle molecules france
repeated column western church sister oxygen plural various agreed opposite
wrong chart prepared pretty solution fresh shop suffix especially shoes
actually nose afraid dead sugar adjective fig office huge gun similar death
score forward stretched experience rose allow fear workers washington
greek women bought led march northern create british difficult match win
doesnt steel total deal determine evening nor rope cotton apple details
entire corn substances smell tools conditions cows track arrived located
sir seat division effect underline view
poster movie film show television series title text logo design print
cover book library catalog novel author story chapter page edition
sign storefront cafe shop bakery restaurant menu banner billboard neon
sticker label badge stamp card invitation flyer brochure magazine
wristband sleeve jacket shirt mug cup bottle sale open closed welcome
hello world diffusion research pizza google quality illustration
photography quote saying says reads written writing letters word words
keyboard computer robot machine learning neural network model data
heat deadpool christmas dreams land apparel precalculus dream master
nightmare discovery adventures rabbit peter coffee sunflower panels
graffiti wall pink bakery kneaded elephant newspaper headline
"""

PHRASES = [
    "A poster with a title text of",
    "A book cover with a title text of",
    "A movie poster with text on it",
    "A TV show poster named",
    "A sign that says",
    "A storefront with written on it",
    "An illustration of movie",
    "An photography of movie",
    "A book design with a title text of",
    "A quality movie print with a title text of",
]


def build_corpus() -> collections.Counter:
    corpus: collections.Counter = collections.Counter()
    for w in WORDS.split():
        corpus[w] += 4
        corpus[w.capitalize()] += 2
        corpus[w.upper()] += 1
    for ph in PHRASES:
        for w in ph.split():
            corpus[w] += 20
    for d in "0123456789":
        corpus[d] += 10
        corpus[d * 2] += 4
        corpus["1" + d] += 2
    return corpus


def train_bpe(corpus: collections.Counter, n_merges: int) -> list[tuple[str, str]]:
    words = {w: tuple(w) + ("</w>",) for w in corpus}
    merges: list[tuple[str, str]] = []
    for _ in range(n_merges):
        pairs: collections.Counter = collections.Counter()
        for w, sym in words.items():
            f = corpus[w]
            for a, b in zip(sym, sym[1:]):
                pairs[(a, b)] += f
        if not pairs:
            break
        best, freq = pairs.most_common(1)[0]
        if freq < 2:
            break
        merges.append(best)
        merged = best[0] + best[1]
        new_words = {}
        for w, sym in words.items():
            out = []
            i = 0
            while i < len(sym):
                if i < len(sym) - 1 and (sym[i], sym[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(sym[i])
                    i += 1
            new_words[w] = tuple(out)
        words = new_words
    return merges


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--merges", type=int, default=768)
    ap.add_argument(
        "--out",
        default=str(Path(__file__).resolve().parents[1] / "src/textforge/assets/bpe_vocab.json"),
    )
    args = ap.parse_args()

    merges = train_bpe(build_corpus(), args.merges)
    payload = {"version": 1, "merges": [list(m) for m in merges]}
    Path(args.out).write_text(json.dumps(payload), encoding="utf-8")
    print(f"wrote {args.out} with {len(merges)} merges")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
